//! Token spans with inclusive boundaries.

use std::fmt;

/// A contiguous token interval `start..=end`. Both indices are 0-based and
/// inclusive, so a single-token span has `start == end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    start: usize,
    end: usize,
}

impl Span {
    /// Panics when `start > end`.
    pub fn new(start: usize, end: usize) -> Self {
        Self::checked(start, end)
            .unwrap_or_else(|| panic!("span start {} after end {}", start, end))
    }

    pub fn checked(start: usize, end: usize) -> Option<Self> {
        (start <= end).then_some(Span { start, end })
    }

    pub fn start(self) -> usize {
        self.start
    }

    pub fn end(self) -> usize {
        self.end
    }

    pub fn len(self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(self) -> bool {
        false
    }

    /// Partial overlap without containment: `s_a < s_b <= e_a < e_b` or the
    /// mirrored condition.
    pub fn clashes(self, other: Span) -> bool {
        let (a, b) = (self, other);
        (a.start < b.start && b.start <= a.end && a.end < b.end)
            || (b.start < a.start && a.start <= b.end && b.end < a.end)
    }

    /// Either span lies within the other; equal spans qualify.
    pub fn contains_or_inside(self, other: Span) -> bool {
        (self.start <= other.start && other.end <= self.end)
            || (other.start <= self.start && self.end <= other.end)
    }

    /// Shares at least one token with `other`.
    pub fn overlaps(self, other: Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

/// Number of spans with `start <= end` in a sentence of `len` tokens.
pub fn count_valid_spans(len: usize) -> usize {
    len * (len + 1) / 2
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Interval-arithmetic view of a clash: the spans share a token, neither
    /// contains the other.
    fn clash_oracle(a: Span, b: Span) -> bool {
        let a_set: Vec<usize> = (a.start()..=a.end()).collect();
        let b_set: Vec<usize> = (b.start()..=b.end()).collect();
        let shared = a_set.iter().any(|t| b_set.contains(t));
        let a_in_b = a_set.iter().all(|t| b_set.contains(t));
        let b_in_a = b_set.iter().all(|t| a_set.contains(t));
        shared && !a_in_b && !b_in_a
    }

    fn all_spans(l: usize) -> Vec<Span> {
        (0..l)
            .flat_map(|s| (s..l).map(move |e| Span::new(s, e)))
            .collect()
    }

    #[test]
    fn bank_of_china_clash() {
        // "the Bank of China": "the Bank of" vs "Bank of China"
        assert!(Span::new(0, 2).clashes(Span::new(1, 3)));
        assert!(Span::new(1, 3).clashes(Span::new(0, 2)));
        // "China" nests inside "Bank of China"
        assert!(!Span::new(1, 3).clashes(Span::new(2, 2)));
        assert!(Span::new(1, 3).contains_or_inside(Span::new(2, 2)));
    }

    #[test]
    fn containment_examples() {
        assert!(Span::new(0, 3).contains_or_inside(Span::new(1, 2)));
        assert!(!Span::new(0, 1).contains_or_inside(Span::new(2, 3)));
        assert!(Span::new(1, 2).contains_or_inside(Span::new(1, 2)));
    }

    #[test]
    fn clash_matches_interval_oracle_exhaustively() {
        for l in 1..=8 {
            let spans = all_spans(l);
            for &a in &spans {
                for &b in &spans {
                    assert_eq!(a.clashes(b), clash_oracle(a, b), "{} vs {}", a, b);
                    assert_eq!(a.clashes(b), b.clashes(a));
                    // A pair either is disjoint, nests, or clashes.
                    let cases =
                        [!a.overlaps(b), a.contains_or_inside(b), a.clashes(b)];
                    assert_eq!(cases.iter().filter(|&&c| c).count(), 1, "{} vs {}", a, b);
                }
            }
        }
    }

    #[test]
    fn valid_span_counts() {
        assert_eq!(count_valid_spans(0), 0);
        assert_eq!(count_valid_spans(1), 1);
        assert_eq!(count_valid_spans(4), 10);
        for l in 0..12 {
            assert_eq!(count_valid_spans(l), all_spans(l).len());
        }
    }

    #[test]
    fn checked_rejects_reversed() {
        assert!(Span::checked(3, 2).is_none());
        assert_eq!(Span::checked(2, 2).map(Span::len), Some(1));
    }
}
