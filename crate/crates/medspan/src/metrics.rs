//! Span-level precision, recall and F1 under strict and overlap matching.
//!
//! Both modes use a one-to-one matching between gold and predicted spans of
//! the same tweet, so `tp <= min(|gold|, |pred|)` always holds. In strict
//! mode a pair is matchable only with identical offsets; in overlap mode any
//! shared character suffices, and the matching is a maximum matching that is
//! seeded with exact-boundary pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Span};
use crate::error::{Error, Result};

/// Predicted spans per tweet id.
pub type Predictions = BTreeMap<String, Vec<Span>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Strict,
    Overlap,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        *self = *self + o;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub mode: EvalMode,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Metrics {
    pub fn from_counts(c: Counts, mode: EvalMode) -> Metrics {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        Metrics {
            precision,
            recall,
            f1: f1(precision, recall),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            mode,
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

fn intersection(a: &Span, b: &Span) -> usize {
    a.end.min(b.end).saturating_sub(a.start.max(b.start))
}

fn matchable(g: &Span, p: &Span, mode: EvalMode) -> bool {
    match mode {
        EvalMode::Strict => g.key() == p.key(),
        EvalMode::Overlap => g.overlaps(p),
    }
}

/// Maximum one-to-one matching; returns `(gold index, pred index)` pairs.
pub fn match_spans(gold: &[Span], pred: &[Span], mode: EvalMode) -> Vec<(usize, usize)> {
    // Candidate golds per prediction, most preferred first.
    let adjacency: Vec<Vec<usize>> = pred
        .iter()
        .map(|p| {
            let mut gs: Vec<usize> = (0..gold.len()).filter(|&g| matchable(&gold[g], p, mode)).collect();
            gs.sort_by(|&a, &b| {
                let exact_a = gold[a].key() == p.key();
                let exact_b = gold[b].key() == p.key();
                exact_b
                    .cmp(&exact_a)
                    .then(intersection(&gold[b], p).cmp(&intersection(&gold[a], p)))
                    .then(gold[a].start.cmp(&gold[b].start))
            });
            gs
        })
        .collect();

    let mut gold_to_pred: Vec<Option<usize>> = vec![None; gold.len()];
    let mut pred_to_gold: Vec<Option<usize>> = vec![None; pred.len()];

    for (p, gs) in adjacency.iter().enumerate() {
        if let Some(&g) = gs.first() {
            if gold[g].key() == pred[p].key() && gold_to_pred[g].is_none() {
                gold_to_pred[g] = Some(p);
                pred_to_gold[p] = Some(g);
            }
        }
    }

    fn augment(
        p: usize,
        adjacency: &[Vec<usize>],
        visited: &mut [bool],
        gold_to_pred: &mut [Option<usize>],
        pred_to_gold: &mut [Option<usize>],
    ) -> bool {
        for &g in &adjacency[p] {
            if visited[g] {
                continue;
            }
            visited[g] = true;
            let free = match gold_to_pred[g] {
                None => true,
                Some(q) => augment(q, adjacency, visited, gold_to_pred, pred_to_gold),
            };
            if free {
                gold_to_pred[g] = Some(p);
                pred_to_gold[p] = Some(g);
                return true;
            }
        }
        false
    }

    for p in 0..pred.len() {
        if pred_to_gold[p].is_none() {
            let mut visited = vec![false; gold.len()];
            augment(p, &adjacency, &mut visited, &mut gold_to_pred, &mut pred_to_gold);
        }
    }

    let mut pairs: Vec<(usize, usize)> = gold_to_pred
        .iter()
        .enumerate()
        .filter_map(|(g, p)| p.map(|p| (g, p)))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// tp/fp/fn for one tweet.
pub fn count_tweet(gold: &[Span], pred: &[Span], mode: EvalMode) -> Counts {
    let tp = match_spans(gold, pred, mode).len();
    Counts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

/// Micro-averaged metrics over all gold tweets. Gold tweets absent from
/// `pred` count as predicting nothing.
pub fn evaluate(gold: &Dataset, pred: &Predictions, mode: EvalMode) -> Result<Metrics> {
    for id in pred.keys() {
        if gold.get(id).is_none() {
            return Err(Error::UnknownTweet(id.clone()));
        }
    }
    let mut total = Counts::default();
    for t in &gold.tweets {
        let p = pred.get(t.id()).map(Vec::as_slice).unwrap_or(&[]);
        total += count_tweet(&t.spans, p, mode);
    }
    Ok(Metrics::from_counts(total, mode))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub strict: Metrics,
    pub overlap: Metrics,
}

/// Strict and overlap scores for a list of systems.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn add(&mut self, name: impl Into<String>, gold: &Dataset, pred: &Predictions) -> Result<()> {
        self.rows.push(ReportRow {
            name: name.into(),
            strict: evaluate(gold, pred, EvalMode::Strict)?,
            overlap: evaluate(gold, pred, EvalMode::Overlap)?,
        });
        Ok(())
    }

    /// Aligned text table, percentages with one decimal.
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.chars().count())
            .max()
            .unwrap_or(0)
            .max("System".len());
        let pct = |x: f64| format!("{:>6.1}", 100.0 * x);
        let mut out = String::new();
        let _ = writeln!(out, "{:width$}  {:^20}   {:^20}", "", "Strict", "Overlap");
        let _ = writeln!(
            out,
            "{:width$}  {:>6} {:>6} {:>6}   {:>6} {:>6} {:>6}",
            "System", "P", "R", "F1", "P", "R", "F1"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:width$}  {} {} {}   {} {} {}",
                r.name,
                pct(r.strict.precision),
                pct(r.strict.recall),
                pct(r.strict.f1),
                pct(r.overlap.precision),
                pct(r.overlap.recall),
                pct(r.overlap.f1),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedTweet, Tweet};

    fn s(start: usize, end: usize) -> Span {
        Span {
            start,
            end,
            surface: "x".repeat(end - start),
            score: None,
        }
    }

    fn gold(spans: Vec<Span>) -> Dataset {
        let text = "x".repeat(40);
        let spans = spans
            .into_iter()
            .map(|sp| Span::from_text(&text, sp.start, sp.end).unwrap())
            .collect();
        Dataset::new("g", vec![AnnotatedTweet::new(Tweet::new("t", "u", text), spans)]).unwrap()
    }

    fn pred(spans: Vec<Span>) -> Predictions {
        [("t".to_string(), spans)].into_iter().collect()
    }

    #[test]
    fn f1_arithmetic() {
        let pct = |p: f64, r: f64| (1000.0 * f1(p, r)).round() / 10.0;
        assert_eq!(pct(0.799, 0.810), 80.4);
        assert_eq!(pct(0.890, 0.660), 75.8);
        assert!((f1(0.890, 0.660) - 0.7579).abs() < 1e-4);
        assert_eq!(f1(0.7, 0.0), 0.0);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn perfect_prediction() {
        let g = gold(vec![s(0, 5), s(10, 12)]);
        let p = pred(vec![s(0, 5), s(10, 12)]);
        for mode in [EvalMode::Strict, EvalMode::Overlap] {
            let m = evaluate(&g, &p, mode).unwrap();
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn boundary_mismatch() {
        let g = gold(vec![s(5, 12)]);
        let p = pred(vec![s(5, 10)]);
        let strict = evaluate(&g, &p, EvalMode::Strict).unwrap();
        assert_eq!((strict.tp, strict.fp, strict.fn_), (0, 1, 1));
        let overlap = evaluate(&g, &p, EvalMode::Overlap).unwrap();
        assert_eq!((overlap.tp, overlap.fp, overlap.fn_), (1, 0, 0));
    }

    #[test]
    fn overlap_is_one_to_one() {
        let g = gold(vec![s(0, 10)]);
        let p = pred(vec![s(0, 4), s(5, 9)]);
        let m = evaluate(&g, &p, EvalMode::Overlap).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
    }

    #[test]
    fn augmenting_path_needed() {
        // Greedy would pair pred 0 with gold 0 and strand gold 1.
        let gold_spans = vec![s(0, 6), s(8, 12)];
        let pred_spans = vec![s(4, 10), s(1, 3)];
        assert_eq!(match_spans(&gold_spans, &pred_spans, EvalMode::Overlap).len(), 2);
    }

    #[test]
    fn zero_denominators() {
        let g = gold(vec![]);
        let m = evaluate(&g, &Predictions::new(), EvalMode::Strict).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn unknown_tweet_is_an_error() {
        let g = gold(vec![]);
        let p: Predictions = [("nope".to_string(), vec![])].into_iter().collect();
        assert!(matches!(evaluate(&g, &p, EvalMode::Strict), Err(Error::UnknownTweet(_))));
    }

    #[test]
    fn report_table_layout() {
        let g = gold(vec![s(0, 5)]);
        let mut report = EvalReport::default();
        report.add("system", &g, &pred(vec![s(0, 5)])).unwrap();
        report.add("none", &g, &Predictions::new()).unwrap();
        let table = report.to_table();
        assert!(table.contains("Strict") && table.contains("Overlap"));
        assert!(table.contains(" 100.0  100.0  100.0    100.0  100.0  100.0"), "{table}");
        assert!(table.contains("   0.0    0.0    0.0"), "{table}");
    }
}
