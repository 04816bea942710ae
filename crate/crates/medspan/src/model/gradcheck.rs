use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_with_grad;
use super::{LossOptions, Model, TrainingExample};
use crate::error::{Error, Result};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-4;
/// Parameters whose analytic and numeric gradients are both below this are
/// not compared.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;
const MAX_D_MODEL: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Index of the parameter with the largest error.
    pub worst_parameter: Option<usize>,
    pub n_checked: usize,
    pub n_skipped: usize,
}

fn total_loss(model: &Model, params: &[f64], ex: &TrainingExample, opts: &LossOptions) -> Result<f64> {
    let (out, _) = model.net.forward(params, &ex.ids, None::<&mut ChaCha8Rng>)?;
    Ok(loss_with_grad(&out, ex, opts)?.breakdown.total)
}

/// Compares the backpropagated gradient of the loss with central finite
/// differences for every parameter, with dropout disabled. The relative
/// error is `|a - n| / max(|a|, |n|)`.
pub fn grad_check(model: &Model, example: &TrainingExample, opts: &LossOptions) -> Result<GradCheckReport> {
    if model.config.d_model > MAX_D_MODEL {
        return Err(Error::Config(format!(
            "gradient checks need d_model <= {MAX_D_MODEL}, got {}",
            model.config.d_model
        )));
    }
    let analytic = analytic_gradient(model, example, opts)?;

    let mut params = model.params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: None,
        n_checked: 0,
        n_skipped: 0,
    };
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + GRAD_CHECK_STEP;
        let plus = total_loss(model, &params, example, opts)?;
        params[i] = orig - GRAD_CHECK_STEP;
        let minus = total_loss(model, &params, example, opts)?;
        params[i] = orig;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        if scale < GRAD_CHECK_FLOOR {
            report.n_skipped += 1;
            continue;
        }
        report.n_checked += 1;
        let err = (a - numeric).abs() / scale;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_parameter = Some(i);
        }
    }
    Ok(report)
}

fn analytic_gradient(model: &Model, example: &TrainingExample, opts: &LossOptions) -> Result<Vec<f64>> {
    let (out, cache) = model.net.forward(&model.params, &example.ids, None::<&mut ChaCha8Rng>)?;
    let lg = loss_with_grad(&out, example, opts)?;
    let mut g = vec![0.0; model.params.len()];
    model.net.backward(&model.params, &cache, lg.d_binary_logit, &lg.d_tag_logits, &mut g);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bio::BioTag;
    use crate::model::{ModelConfig, Vocab};

    fn vocab(n: usize) -> Vocab {
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let ds = crate::corpus::Dataset::new(
            "v",
            vec![crate::corpus::AnnotatedTweet::negative(crate::corpus::Tweet::new("0", "u", text))],
        )
        .unwrap();
        crate::model::build_vocab(&ds, 1, true).unwrap()
    }

    fn tiny(layers: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: layers,
            n_heads: 2,
            d_ff: 8,
            max_seq_len: 8,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn example() -> TrainingExample {
        TrainingExample {
            id: "g".into(),
            ids: vec![2, 3, 4, 5, 3],
            binary_label: 1.0,
            tags: vec![Some(BioTag::O), Some(BioTag::B), Some(BioTag::I), None],
        }
    }

    #[test]
    fn random_tiny_models_pass() {
        for (seed, layers) in [(1, 1), (2, 2)] {
            let mut m = Model::new(tiny(layers), vocab(4), seed).unwrap();
            // Larger weights exercise the nonlinearities.
            m.params.iter_mut().for_each(|p| *p *= 5.0);
            let r = grad_check(&m, &example(), &LossOptions::default()).unwrap();
            assert!(r.max_relative_error <= 1e-3, "{r:?}");
            assert!(r.n_checked > 100);
        }
    }

    #[test]
    fn binary_bias_gradient_is_p_minus_y() {
        let m = Model::new(tiny(1), vocab(4), 4).unwrap();
        let ex = example();
        let g = analytic_gradient(&m, &ex, &LossOptions::default()).unwrap();
        let p = m.forward(&ex.ids).unwrap().binary_prob;
        let b = m.net.layout.cls_b.offset;
        assert!((g[b] - (p - ex.binary_label)).abs() <= 1e-12);

        let single = LossOptions {
            multi_task: false,
            ..LossOptions::default()
        };
        let g = analytic_gradient(&m, &ex, &single).unwrap();
        assert_eq!(g[b], 0.0);
    }

    #[test]
    fn saturated_outputs_are_skipped() {
        let mut m = Model::new(tiny(1), vocab(4), 4).unwrap();
        let lay = m.net.layout.clone();
        for slot in [lay.cls_w, lay.tag_w] {
            m.params[slot.range()].fill(0.0);
        }
        m.params[lay.cls_b.offset] = 60.0;
        m.params[lay.tag_b.offset + BioTag::O.index()] = 60.0;
        let ex = TrainingExample {
            tags: vec![Some(BioTag::O); 4],
            ..example()
        };
        let r = grad_check(&m, &ex, &LossOptions::default()).unwrap();
        assert_eq!(r.n_checked, 0);
        assert_eq!(r.n_skipped, m.params.len());
    }

    #[test]
    fn rejects_large_models() {
        let cfg = ModelConfig {
            d_model: 32,
            ..tiny(1)
        };
        let m = Model::new(cfg, vocab(2), 0).unwrap();
        assert!(grad_check(&m, &example(), &LossOptions::default()).is_err());
    }
}
