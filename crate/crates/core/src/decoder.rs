//! Ranked greedy span selection under nested or flat constraints.
//!
//! Every valid cell of a [`ScoreTensor`] receives its argmax category. Cells
//! whose argmax is not the non-entity class (index 0) become candidates,
//! ranked by the raw score of that category. Candidates are then accepted in
//! rank order when they do not clash with anything accepted so far; flat
//! decoding additionally rejects candidates that contain or sit inside an
//! accepted span.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scores::ScoreTensor;
use crate::span::Span;

pub const NON_ENTITY: usize = 0;

/// Largest sentence length accepted by [`oracle_decode`].
pub const ORACLE_MAX_LEN: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecodeMode {
    Nested,
    Flat,
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nested" => Ok(DecodeMode::Nested),
            "flat" => Ok(DecodeMode::Flat),
            other => Err(Error::Config(format!(
                "unknown decode mode '{}', expected nested or flat",
                other
            ))),
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::Nested => "nested",
            DecodeMode::Flat => "flat",
        })
    }
}

/// A candidate or selected entity: span, category index (never
/// [`NON_ENTITY`]) and the raw score of that category.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledSpan {
    pub span: Span,
    pub category: usize,
    pub score: f64,
}

/// Argmax category per valid span, keeping only non-entity-free cells.
/// Ties go to the lowest category index.
pub fn label_spans(scores: &ScoreTensor) -> Vec<LabeledSpan> {
    let mut out = Vec::new();
    for span in scores.valid_spans() {
        let cell = scores.cell(span.start(), span.end());
        let mut best = 0;
        for k in 1..cell.len() {
            if cell[k] > cell[best] {
                best = k;
            }
        }
        if best != NON_ENTITY {
            out.push(LabeledSpan {
                span,
                category: best,
                score: cell[best],
            });
        }
    }
    out
}

/// Rank order: score descending, then start ascending, end descending and
/// category ascending.
fn rank_order(a: &LabeledSpan, b: &LabeledSpan) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.span.start().cmp(&b.span.start()))
        .then(b.span.end().cmp(&a.span.end()))
        .then(a.category.cmp(&b.category))
}

fn output_order(a: &LabeledSpan, b: &LabeledSpan) -> Ordering {
    a.span
        .cmp(&b.span)
        .then(a.category.cmp(&b.category))
}

fn admissible(candidate: Span, accepted: &[LabeledSpan], mode: DecodeMode) -> bool {
    accepted.iter().all(|a| {
        !candidate.clashes(a.span)
            && (mode == DecodeMode::Nested || !candidate.contains_or_inside(a.span))
    })
}

/// Greedy selection over an arbitrary candidate list. The result is sorted by
/// span, independent of the input order.
pub fn select(mut candidates: Vec<LabeledSpan>, mode: DecodeMode) -> Vec<LabeledSpan> {
    candidates.sort_by(rank_order);
    let mut accepted: Vec<LabeledSpan> = Vec::new();
    for c in candidates {
        if admissible(c.span, &accepted, mode) {
            accepted.push(c);
        }
    }
    accepted.sort_by(output_order);
    accepted
}

/// Decode the entity set of one sentence.
pub fn decode(scores: &ScoreTensor, mode: DecodeMode) -> Vec<LabeledSpan> {
    select(label_spans(scores), mode)
}

/// Reference decoder for verification. Re-derives candidates and repeatedly
/// scans for the best remaining one instead of sorting. Limited to sentences
/// of at most [`ORACLE_MAX_LEN`] tokens.
pub fn oracle_decode(scores: &ScoreTensor, mode: DecodeMode) -> Result<Vec<LabeledSpan>> {
    let l = scores.len();
    if l > ORACLE_MAX_LEN {
        return Err(Error::Data(format!(
            "oracle decoding is limited to {} tokens, got {}",
            ORACLE_MAX_LEN, l
        )));
    }

    let mut pool: Vec<(usize, usize, usize, f64)> = Vec::new();
    for s in 0..l {
        for e in s..l {
            let cell = scores.cell(s, e);
            let top = cell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let k = cell.iter().position(|&v| v == top).unwrap();
            if k != 0 {
                pool.push((s, e, k, top));
            }
        }
    }

    // Does candidate x come before y in the ranking?
    let before = |x: &(usize, usize, usize, f64), y: &(usize, usize, usize, f64)| -> bool {
        if x.3 != y.3 {
            return x.3 > y.3;
        }
        if x.0 != y.0 {
            return x.0 < y.0;
        }
        if x.1 != y.1 {
            return x.1 > y.1;
        }
        x.2 < y.2
    };
    let compatible = |x: (usize, usize), y: (usize, usize)| -> bool {
        let disjoint = x.1 < y.0 || y.1 < x.0;
        let nested = (x.0 >= y.0 && x.1 <= y.1) || (y.0 >= x.0 && y.1 <= x.1);
        match mode {
            DecodeMode::Flat => disjoint,
            DecodeMode::Nested => disjoint || nested,
        }
    };

    let mut chosen: Vec<(usize, usize, usize, f64)> = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            if before(&pool[i], &pool[best]) {
                best = i;
            }
        }
        let cand = pool.remove(best);
        if chosen.iter().all(|c| compatible((c.0, c.1), (cand.0, cand.1))) {
            chosen.push(cand);
        }
    }

    let mut out: Vec<LabeledSpan> = chosen
        .into_iter()
        .map(|(s, e, k, v)| LabeledSpan {
            span: Span::new(s, e),
            category: k,
            score: v,
        })
        .collect();
    out.sort_by(output_order);
    Ok(out)
}
