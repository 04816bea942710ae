//! Agreement voting over the span predictions of several models.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Span};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalMode, Metrics, Predictions};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionSet {
    pub model_name: String,
    pub predictions: Predictions,
}

impl PredictionSet {
    pub fn new(model_name: impl Into<String>, predictions: Predictions) -> Self {
        PredictionSet {
            model_name: model_name.into(),
            predictions,
        }
    }
}

/// When two predictions count as the same span.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementIdentity {
    #[default]
    ExactOffsets,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Minimum number of models that must predict a span.
    pub k: usize,
    pub identity: AgreementIdentity,
    /// Drop overlapping survivors, preferring more votes, then longer spans.
    pub resolve_overlaps: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            k: 1,
            identity: AgreementIdentity::ExactOffsets,
            resolve_overlaps: true,
        }
    }
}

impl EnsembleConfig {
    pub fn with_k(k: usize) -> Self {
        EnsembleConfig {
            k,
            ..Default::default()
        }
    }
}

struct Tally {
    votes: usize,
    span: Span,
    scores: Vec<f64>,
}

/// Keeps every span predicted by at least `cfg.k` of the sets. The result
/// has an entry for every tweet id seen in any set; a set missing a tweet
/// predicts nothing for it.
pub fn vote(sets: &[PredictionSet], cfg: &EnsembleConfig) -> Result<Predictions> {
    let m = sets.len();
    if cfg.k < 1 || cfg.k > m {
        return Err(Error::Config(format!(
            "agreement threshold k={} outside 1..={m}",
            cfg.k
        )));
    }
    let universe: std::collections::BTreeSet<&String> =
        sets.iter().flat_map(|s| s.predictions.keys()).collect();
    let mut out = Predictions::new();
    for id in universe {
        let mut tallies: BTreeMap<(usize, usize), Tally> = BTreeMap::new();
        for set in sets {
            let Some(spans) = set.predictions.get(id) else {
                continue;
            };
            let mut seen = HashSet::new();
            for span in spans {
                if !seen.insert(span.key()) {
                    continue;
                }
                let tally = tallies.entry(span.key()).or_insert_with(|| Tally {
                    votes: 0,
                    span: Span {
                        score: None,
                        ..span.clone()
                    },
                    scores: Vec::new(),
                });
                tally.votes += 1;
                tally.scores.extend(span.score);
            }
        }
        let mut agreed: Vec<Tally> = tallies.into_values().filter(|t| t.votes >= cfg.k).collect();
        if cfg.resolve_overlaps {
            agreed.sort_by(|a, b| {
                b.votes
                    .cmp(&a.votes)
                    .then(b.span.len().cmp(&a.span.len()))
                    .then(a.span.start.cmp(&b.span.start))
            });
            let mut kept: Vec<Tally> = Vec::with_capacity(agreed.len());
            for t in agreed {
                if !kept.iter().any(|k| k.span.overlaps(&t.span)) {
                    kept.push(t);
                }
            }
            agreed = kept;
        }
        let mut spans: Vec<Span> = agreed
            .into_iter()
            .map(|t| {
                let mut span = t.span;
                if !t.scores.is_empty() {
                    span.score = Some(t.scores.iter().sum::<f64>() / t.scores.len() as f64);
                }
                span
            })
            .collect();
        spans.sort_by_key(Span::key);
        out.insert(id.clone(), spans);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_k: usize,
    pub best: Metrics,
    /// Strict metrics for every k in 1..=M.
    pub sweep: Vec<(usize, Metrics)>,
}

/// Picks the agreement threshold with the best strict F1 on `gold`; ties go
/// to the larger k.
pub fn tune_k(sets: &[PredictionSet], gold: &Dataset) -> Result<TuneResult> {
    if sets.is_empty() {
        return Err(Error::Config("no prediction sets to ensemble".into()));
    }
    let mut sweep = Vec::with_capacity(sets.len());
    for k in 1..=sets.len() {
        let voted = vote(sets, &EnsembleConfig::with_k(k))?;
        sweep.push((k, evaluate(gold, &voted, EvalMode::Strict)?));
    }
    let (best_k, best) = sweep
        .iter()
        .copied()
        .reduce(|best, cur| if cur.1.f1 >= best.1.f1 { cur } else { best })
        .expect("at least one k");
    Ok(TuneResult { best_k, best, sweep })
}

/// One line of a prediction-set file.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PredictionRecord {
    model: String,
    tweet_id: String,
    spans: Vec<Span>,
}

/// Reads a prediction-set JSONL file. Lines are grouped by model name in
/// order of first appearance.
pub fn load_prediction_sets(path: impl AsRef<Path>) -> Result<Vec<PredictionSet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sets: Vec<PredictionSet> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let idx = match sets.iter().position(|s| s.model_name == rec.model) {
            Some(idx) => idx,
            None => {
                sets.push(PredictionSet::new(rec.model.clone(), Predictions::new()));
                sets.len() - 1
            }
        };
        if sets[idx].predictions.insert(rec.tweet_id.clone(), rec.spans).is_some() {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("duplicate tweet id {} for model {}", rec.tweet_id, rec.model),
            });
        }
    }
    Ok(sets)
}

pub fn save_prediction_sets(sets: &[PredictionSet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for set in sets {
        for (id, spans) in &set.predictions {
            let rec = PredictionRecord {
                model: set.model_name.clone(),
                tweet_id: id.clone(),
                spans: spans.clone(),
            };
            let line = serde_json::to_string(&rec).expect("records always serialize");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
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

    fn set(name: &str, spans: Vec<Span>) -> PredictionSet {
        PredictionSet::new(name, [("t".to_string(), spans)].into_iter().collect())
    }

    fn keys(p: &Predictions) -> Vec<(usize, usize)> {
        p["t"].iter().map(Span::key).collect()
    }

    #[test]
    fn unanimous_span_survives() {
        let sets: Vec<_> = (0..8).map(|i| set(&format!("m{i}"), vec![s(0, 4)])).collect();
        assert_eq!(keys(&vote(&sets, &EnsembleConfig::with_k(6)).unwrap()), [(0, 4)]);
    }

    #[test]
    fn five_of_eight() {
        let sets: Vec<_> = (0..8)
            .map(|i| set(&format!("m{i}"), if i < 5 { vec![s(0, 4)] } else { vec![] }))
            .collect();
        assert_eq!(keys(&vote(&sets, &EnsembleConfig::with_k(5)).unwrap()), [(0, 4)]);
        assert!(keys(&vote(&sets, &EnsembleConfig::with_k(6)).unwrap()).is_empty());
    }

    #[test]
    fn k_one_is_union_of_disjoint_sets() {
        let sets = vec![set("a", vec![s(0, 2)]), set("b", vec![s(5, 7)]), set("c", vec![])];
        assert_eq!(keys(&vote(&sets, &EnsembleConfig::with_k(1)).unwrap()), [(0, 2), (5, 7)]);
    }

    #[test]
    fn k_out_of_range() {
        let sets = vec![set("a", vec![])];
        assert!(vote(&sets, &EnsembleConfig::with_k(0)).is_err());
        assert!(vote(&sets, &EnsembleConfig::with_k(2)).is_err());
    }

    #[test]
    fn scores_are_averaged() {
        let sets = vec![
            set("a", vec![s(0, 2).with_score(0.8)]),
            set("b", vec![s(0, 2).with_score(0.6)]),
        ];
        let out = vote(&sets, &EnsembleConfig::with_k(2)).unwrap();
        assert!((out["t"][0].score.unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn conflicts_prefer_votes_then_length() {
        let sets = vec![
            set("a", vec![s(0, 4)]),
            set("b", vec![s(0, 4)]),
            set("c", vec![s(0, 9)]),
        ];
        let out = vote(&sets, &EnsembleConfig::with_k(1)).unwrap();
        assert_eq!(keys(&out), [(0, 4)]);

        let sets = vec![set("a", vec![s(0, 4)]), set("b", vec![s(2, 9)])];
        assert_eq!(keys(&vote(&sets, &EnsembleConfig::with_k(1)).unwrap()), [(2, 9)]);
        let keep_all = EnsembleConfig {
            resolve_overlaps: false,
            ..EnsembleConfig::with_k(1)
        };
        assert_eq!(keys(&vote(&sets, &keep_all).unwrap()), [(0, 4), (2, 9)]);
    }

    #[test]
    fn missing_tweet_means_no_prediction() {
        let a = set("a", vec![s(0, 2)]);
        let b = PredictionSet::new("b", Predictions::new());
        let out = vote(&[a, b], &EnsembleConfig::with_k(2)).unwrap();
        assert!(out["t"].is_empty());
    }

    fn gold(spans: &[(usize, usize)]) -> Dataset {
        let text = "x".repeat(30);
        let spans = spans.iter().map(|&(a, b)| Span::from_text(&text, a, b).unwrap()).collect();
        Dataset::new("g", vec![AnnotatedTweet::new(Tweet::new("t", "u", text), spans)]).unwrap()
    }

    #[test]
    fn tune_single_model() {
        let r = tune_k(&[set("a", vec![s(0, 2)])], &gold(&[(0, 2)])).unwrap();
        assert_eq!(r.best_k, 1);
    }

    #[test]
    fn tune_identical_models_picks_largest_k() {
        let sets: Vec<_> = (0..4).map(|i| set(&format!("m{i}"), vec![s(0, 2), s(5, 8)])).collect();
        let r = tune_k(&sets, &gold(&[(0, 2)])).unwrap();
        assert_eq!(r.best_k, 4);
        assert_eq!(r.sweep.len(), 4);
    }

    #[test]
    fn tune_middle_k_wins() {
        // gold {A, B}. A is predicted by all three models, B by two, and
        // each model adds its own false positive.
        let a = s(0, 2);
        let b = s(4, 6);
        let sets = vec![
            set("m1", vec![a.clone(), b.clone(), s(10, 12)]),
            set("m2", vec![a.clone(), b.clone(), s(14, 16)]),
            set("m3", vec![a.clone(), s(18, 20)]),
        ];
        let g = gold(&[(0, 2), (4, 6)]);
        let r = tune_k(&sets, &g).unwrap();
        // Exhaustive: k=1 P=2/5 R=1, k=2 P=1 R=1, k=3 P=1 R=1/2.
        let f1s: Vec<f64> = r.sweep.iter().map(|(_, m)| m.f1).collect();
        let expected = [crate::metrics::f1(0.4, 1.0), 1.0, crate::metrics::f1(1.0, 0.5)];
        for (got, want) in f1s.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(r.best_k, 2);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let sets = vec![
            set("a", vec![s(0, 2).with_score(0.9)]),
            set("b", vec![]),
        ];
        save_prediction_sets(&sets, &path).unwrap();
        assert_eq!(load_prediction_sets(&path).unwrap(), sets);
    }
}
