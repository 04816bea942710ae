use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_with_grad;
use super::{build_vocab, Model, ModelConfig, TrainConfig, TrainingExample};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalMode};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-example losses over the epoch.
    pub loss: f64,
    pub binary_loss: f64,
    pub tag_loss: f64,
    /// Strict F1 on the selection set after the epoch.
    pub selection_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_name: String,
    /// `"dev"` when a dev set was supplied, otherwise `"train"`.
    pub selected_on: String,
    pub n_parameters: usize,
    pub vocab_size: usize,
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub best_f1: f64,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn selection_f1(model: &Model, gold: &Dataset) -> Result<f64> {
    Ok(evaluate(gold, &model.predict_dataset(gold), EvalMode::Strict)?.f1)
}

/// Span-annotated part of a dataset; `binary_only` tweets carry no gold
/// spans to score against.
fn span_annotated(ds: &Dataset) -> Dataset {
    Dataset {
        name: ds.name.clone(),
        tweets: ds.tweets.iter().filter(|t| !t.binary_only).cloned().collect(),
    }
}

/// Trains a tagger from scratch with Adam on minibatches of mean gradients.
/// After every epoch the model is scored (strict F1) on `dev`, or on the
/// training set when `dev` is `None`; the best-scoring parameters are
/// returned. Deterministic given `tcfg.seed`.
pub fn train(
    train: &Dataset,
    dev: Option<&Dataset>,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    mcfg.validate()?;
    tcfg.validate()?;
    let vocab = build_vocab(train, tcfg.min_freq, mcfg.case_sensitive)?;
    let mut model = Model::new(mcfg.clone(), vocab, tcfg.seed)?;
    let examples: Vec<TrainingExample> = model.examples(train)?;
    let selection = span_annotated(dev.unwrap_or(train));
    let opts = tcfg.loss_options();

    let mut shuffle_rng = rng(tcfg.seed, 1);
    let mut dropout_rng = rng(tcfg.seed, 2);
    let mut adam = Adam::new(model.n_parameters());
    let mut grad = vec![0.0; model.n_parameters()];
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let mut best_f1 = selection_f1(&model, &selection)?;
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(tcfg.epochs);
    let mut stopped_early = tcfg.stop_at_f1.is_some_and(|target| best_f1 >= target);
    log::info!(
        "training on {} ({} tweets, {} parameters), selecting on {}",
        train.name,
        train.len(),
        model.n_parameters(),
        selection.name
    );

    for epoch in 1..=tcfg.epochs {
        if stopped_early {
            break;
        }
        order.shuffle(&mut shuffle_rng);
        let (mut sum_total, mut sum_binary, mut sum_tags) = (0.0, 0.0, 0.0);
        for (step, batch) in order.chunks(tcfg.batch_size).enumerate() {
            grad.fill(0.0);
            for &i in batch {
                let ex = &examples[i];
                let (out, cache) = model.net.forward(&model.params, &ex.ids, Some(&mut dropout_rng))?;
                let lg = loss_with_grad(&out, ex, &opts)?;
                if !lg.breakdown.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        detail: format!("tweet {}: {:?}", ex.id, lg.breakdown),
                    });
                }
                sum_total += lg.breakdown.total;
                sum_binary += lg.breakdown.binary;
                sum_tags += lg.breakdown.tags;
                model.net.backward(&model.params, &cache, lg.d_binary_logit, &lg.d_tag_logits, &mut grad);
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!("non-finite gradient at parameter {bad}"),
                });
            }
            adam.step(&mut model.params, &grad, tcfg.lr);
        }

        let n = examples.len().max(1) as f64;
        let f1 = selection_f1(&model, &selection)?;
        let stats = EpochStats {
            epoch,
            loss: sum_total / n,
            binary_loss: sum_binary / n,
            tag_loss: sum_tags / n,
            selection_f1: f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (binary {:.4}, tags {:.4}), strict F1 {:.4}",
            stats.loss,
            stats.binary_loss,
            stats.tag_loss,
            f1
        );
        epochs.push(stats);
        if f1 > best_f1 {
            best_f1 = f1;
            best_params.clone_from(&model.params);
            best_epoch = epoch;
        }
        stopped_early = tcfg.stop_at_f1.is_some_and(|target| f1 >= target);
    }

    let vocab_size = model.vocab.len();
    model.params = best_params;
    let report = TrainReport {
        train_name: train.name.clone(),
        selected_on: if dev.is_some() { "dev" } else { "train" }.to_string(),
        n_parameters: model.n_parameters(),
        vocab_size,
        epochs,
        best_epoch,
        best_f1,
        stopped_early,
    };
    Ok((model, report))
}
