use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::transformer::{log_sum_exp, softmax_vec};
use super::{ForwardOutput, TrainingExample};
use crate::error::{Error, Result};

/// How per-token cross-entropies combine into the tag loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagLossReduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossOptions {
    /// When false the binary term is computed but left out of the total.
    pub multi_task: bool,
    pub reduction: TagLossReduction,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            multi_task: true,
            reduction: TagLossReduction::Mean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub binary: f64,
    pub tags: f64,
    pub total: f64,
}

pub(crate) struct LossGrad {
    pub breakdown: LossBreakdown,
    pub d_binary_logit: f64,
    pub d_tag_logits: Array2<f64>,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Loss of one forward pass against its example: binary cross-entropy on the
/// CLS logit plus the reduced tag cross-entropy over supervised positions.
pub fn loss(out: &ForwardOutput, example: &TrainingExample, opts: &LossOptions) -> Result<LossBreakdown> {
    loss_with_grad(out, example, opts).map(|g| g.breakdown)
}

pub(crate) fn loss_with_grad(out: &ForwardOutput, ex: &TrainingExample, opts: &LossOptions) -> Result<LossGrad> {
    let n = out.tag_logits.nrows();
    if ex.tags.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: ex.tags.len(),
        });
    }
    let y = ex.binary_label;
    let z = out.binary_logit;
    let binary = softplus(z) - y * z;
    let d_binary = if opts.multi_task { out.binary_prob - y } else { 0.0 };

    let supervised = ex.n_supervised();
    let scale = match opts.reduction {
        TagLossReduction::Mean if supervised > 0 => 1.0 / supervised as f64,
        _ => 1.0,
    };
    let mut tags = 0.0;
    let mut d_tags = Array2::zeros(out.tag_logits.dim());
    for (i, tag) in ex.tags.iter().enumerate() {
        let Some(tag) = tag else { continue };
        let logits = out.tag_logits.row(i);
        tags += log_sum_exp(logits) - logits[tag.index()];
        let mut g = softmax_vec(logits);
        g[tag.index()] -= 1.0;
        d_tags.row_mut(i).assign(&(g * scale));
    }
    tags *= scale;

    let total = if opts.multi_task { binary + tags } else { tags };
    Ok(LossGrad {
        breakdown: LossBreakdown { binary, tags, total },
        d_binary_logit: d_binary,
        d_tag_logits: d_tags,
    })
}
