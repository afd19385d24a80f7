//! Exact-match precision, recall and F1.
//!
//! A predicted entity is correct when the same `(start, end, category)`
//! triple is in the gold set of the same sentence. Duplicate predictions
//! count once.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::data::AnnotatedSentence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// F1 is `2PR / (P + R)`, evaluated as `2·correct / (gold + predicted)`;
/// all three are 0 when their denominator is.
pub fn prf(c: Counts) -> Scores {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.correct, c.predicted);
    let recall = ratio(c.correct, c.gold);
    let f1 = ratio(2 * c.correct, c.gold + c.predicted);
    Scores {
        precision,
        recall,
        f1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryReport {
    pub category: String,
    #[serde(flatten)]
    pub counts: Counts,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub sentences: usize,
    /// Micro-averaged totals.
    pub micro: Scores,
    pub counts: Counts,
    /// Unweighted mean of the per-category scores.
    pub macro_avg: Scores,
    pub categories: Vec<CategoryReport>,
}

impl EvalReport {
    pub fn f1(&self) -> f64 {
        self.micro.f1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

type Triple<'a> = (usize, usize, &'a str);

fn triples(s: &AnnotatedSentence) -> BTreeSet<Triple<'_>> {
    s.entities()
        .iter()
        .map(|e| (e.start, e.end, e.category.as_str()))
        .collect()
}

/// Compare predictions with gold annotations, matching sentences by id.
pub fn evaluate(gold: &[AnnotatedSentence], pred: &[AnnotatedSentence]) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, &AnnotatedSentence> = HashMap::with_capacity(pred.len());
    for p in pred {
        if by_id.insert(p.id(), p).is_some() {
            return Err(Error::Data(format!("duplicate predicted sentence id {}", p.id())));
        }
    }
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut seen = BTreeSet::new();
    let mut per: BTreeMap<&str, Counts> = BTreeMap::new();
    for g in gold {
        if !seen.insert(g.id()) {
            return Err(Error::Data(format!("duplicate gold sentence id {}", g.id())));
        }
        let p = by_id
            .get(g.id())
            .ok_or_else(|| Error::Data(format!("no prediction for sentence {}", g.id())))?;
        let (gs, ps) = (triples(g), triples(p));
        for t in &gs {
            per.entry(t.2).or_default().gold += 1;
        }
        for t in &ps {
            let c = per.entry(t.2).or_default();
            c.predicted += 1;
            if gs.contains(t) {
                c.correct += 1;
            }
        }
    }
    let mut total = Counts::default();
    let mut categories = Vec::with_capacity(per.len());
    for (name, c) in per {
        total.gold += c.gold;
        total.predicted += c.predicted;
        total.correct += c.correct;
        categories.push(CategoryReport {
            category: name.to_string(),
            counts: c,
            scores: prf(c),
        });
    }
    let n = categories.len().max(1) as f64;
    let macro_avg = Scores {
        precision: categories.iter().map(|c| c.scores.precision).sum::<f64>() / n,
        recall: categories.iter().map(|c| c.scores.recall).sum::<f64>() / n,
        f1: categories.iter().map(|c| c.scores.f1).sum::<f64>() / n,
    };
    Ok(EvalReport {
        sentences: gold.len(),
        micro: prf(total),
        counts: total,
        macro_avg,
        categories,
    })
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// Fixed-width P/R/F1 rows, one per system, in input order.
pub fn report_table(reports: &[(&str, &EvalReport)]) -> String {
    let width = reports
        .iter()
        .map(|(n, _)| n.chars().count())
        .chain(std::iter::once(6))
        .max()
        .unwrap();
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}", "System", "P", "R", "F1");
    for (name, r) in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}",
            name,
            pct(r.micro.precision),
            pct(r.micro.recall),
            pct(r.micro.f1)
        );
    }
    out
}

/// Per-category breakdown of one report, followed by micro and macro rows.
pub fn category_table(report: &EvalReport) -> String {
    let width = report
        .categories
        .iter()
        .map(|c| c.category.chars().count())
        .chain(std::iter::once(8))
        .max()
        .unwrap();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
        "Category", "Gold", "Pred", "Corr", "P", "R", "F1"
    );
    let mut row = |name: &str, c: Option<Counts>, s: Scores| {
        let (g, p, k) = c.map_or((String::new(), String::new(), String::new()), |c| {
            (c.gold.to_string(), c.predicted.to_string(), c.correct.to_string())
        });
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
            name,
            g,
            p,
            k,
            pct(s.precision),
            pct(s.recall),
            pct(s.f1)
        );
    };
    for c in &report.categories {
        row(&c.category, Some(c.counts), c.scores);
    }
    row("micro", Some(report.counts), report.micro);
    row("macro", None, report.macro_avg);
    out
}
