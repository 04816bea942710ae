//! Multi-task transformer tagger.
//!
//! A shared encoder reads `[CLS] t1 .. tn`. A sigmoid head on the CLS
//! position predicts whether the tweet mentions a drug; a softmax head on
//! every other position predicts its BIO tag. Training minimizes the sum of
//! both losses. Spans come from the tag head alone.

mod checkpoint;
mod gradcheck;
mod loss;
mod params;
mod train;
mod transformer;
mod vocab;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bio::{self, BioTag, TagSequence};
use crate::corpus::{AnnotatedTweet, Dataset, Span};
use crate::error::{Error, Result};
use crate::metrics::Predictions;
use crate::preprocess::{normalize, normalize_annotated, unproject_spans, NormalizedTweet};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_FLOOR, GRAD_CHECK_STEP};
pub use loss::{loss, LossBreakdown, LossOptions, TagLossReduction};
pub use train::{train, EpochStats, TrainReport};
pub use vocab::{build_vocab, Vocab, CLS, PAD, UNK};

use transformer::Network;

/// Standard deviation of the normal initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Sequence length including the CLS position.
    pub max_seq_len: usize,
    pub dropout: f64,
    pub tag_set_size: usize,
    pub case_sensitive: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 128,
            max_seq_len: 128,
            dropout: 0.1,
            tag_set_size: 3,
            case_sensitive: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.n_layers == 0 {
            return fail("d_model, n_heads, d_ff and n_layers must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.max_seq_len < 2 {
            return fail(format!("max_seq_len must be at least 2, got {}", self.max_seq_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.tag_set_size != BioTag::ALL.len() {
            return fail(format!("tag_set_size must be {}, got {}", BioTag::ALL.len(), self.tag_set_size));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub multi_task: bool,
    pub tag_loss: TagLossReduction,
    /// Tokens seen fewer times than this map to `[UNK]`.
    pub min_freq: usize,
    /// Stop as soon as the selection F1 reaches this value.
    pub stop_at_f1: Option<f64>,
}

impl Default for TrainConfig {
    /// Toy-scale defaults: lr 1e-3, batch 16.
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
            multi_task: true,
            tag_loss: TagLossReduction::Mean,
            min_freq: 1,
            stop_at_f1: None,
        }
    }
}

impl TrainConfig {
    /// The fine-tuning schedule used with pre-trained encoders: lr 3e-5,
    /// batch 64, 10 epochs.
    pub fn paper_scale() -> Self {
        TrainConfig {
            lr: 3e-5,
            batch_size: 64,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.min_freq == 0 {
            return Err(Error::Config("epochs, batch_size and min_freq must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if let Some(f) = self.stop_at_f1 {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("stop_at_f1 must lie in [0, 1], got {f}")));
            }
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            multi_task: self.multi_task,
            reduction: self.tag_loss,
        }
    }
}

/// Output of one forward pass over `[CLS] t1 .. tn`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub binary_logit: f64,
    pub binary_prob: f64,
    /// `n x 3` logits for the non-CLS positions, columns in `BioTag` order.
    pub tag_logits: Array2<f64>,
    /// Row-wise softmax of `tag_logits`.
    pub tag_dists: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Spans on the original tweet text, each with a score.
    pub spans: Vec<Span>,
    pub binary_prob: f64,
}

/// One supervised sequence. `tags[i]` is the gold tag of token `i`, or
/// `None` when that position is excluded from the tag loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub ids: Vec<usize>,
    pub binary_label: f64,
    pub tags: Vec<Option<BioTag>>,
}

impl TrainingExample {
    pub fn n_supervised(&self) -> usize {
        self.tags.iter().filter(|t| t.is_some()).count()
    }
}

/// Geometric mean of the chosen-tag probabilities of a span's tokens.
pub fn span_score(probs: &[f64]) -> f64 {
    let log_mean = probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64;
    log_mean.exp().clamp(0.0, 1.0)
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    vocab: Vocab,
    net: Network,
    params: Vec<f64>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.vocab == other.vocab && self.params == other.params
    }
}

impl Model {
    /// Randomly initialized model; the draw depends only on `seed`.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Model> {
        config.validate()?;
        let net = Network::new(config.clone(), vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let params = net.layout.init(INIT_STD, &mut rng);
        Ok(Model {
            config,
            vocab,
            net,
            params,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, vocab: Vocab, params: Vec<f64>) -> Result<Model> {
        config.validate()?;
        let net = Network::new(config.clone(), vocab.len());
        if params.len() != net.layout.total {
            return Err(Error::LengthMismatch {
                expected: net.layout.total,
                actual: params.len(),
            });
        }
        Ok(Model {
            config,
            vocab,
            net,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.params.len()
    }

    /// Token ids for a normalized tweet: CLS followed by at most
    /// `max_seq_len - 1` token ids.
    pub fn encode_tokens(&self, nt: &NormalizedTweet) -> Vec<usize> {
        let keep = nt.tokens.len().min(self.config.max_seq_len - 1);
        std::iter::once(CLS)
            .chain(nt.tokens[..keep].iter().map(|t| self.vocab.id(&t.surface)))
            .collect()
    }

    /// Inference-mode forward pass (no dropout).
    pub fn forward(&self, ids: &[usize]) -> Result<ForwardOutput> {
        self.net
            .forward(&self.params, ids, None::<&mut ChaCha8Rng>)
            .map(|(out, _)| out)
    }

    /// Builds the supervised form of an annotated tweet. Spans cut by
    /// truncation are masked out of the tag loss; `binary_only` tweets
    /// supervise the binary head alone.
    pub fn example(&self, tweet: &AnnotatedTweet) -> Result<TrainingExample> {
        let (projected, nt, _) = normalize_annotated(tweet);
        let ids = self.encode_tokens(&nt);
        let keep = ids.len() - 1;
        let tags = if tweet.binary_only {
            vec![None; keep]
        } else {
            let full = bio::encode(&nt.tokens, &projected.spans).map_err(|e| Error::InvalidSpan {
                tweet_id: tweet.id().to_string(),
                message: e.to_string(),
            })?;
            let mut tags: Vec<Option<BioTag>> = full.0[..keep].iter().copied().map(Some).collect();
            let (runs, _) = bio::token_runs(&full.0);
            for run in runs.iter().filter(|r| r.start < keep && r.end > keep) {
                log::warn!("tweet {}: span crosses the truncation point, masked", tweet.id());
                for t in &mut tags[run.start..keep] {
                    *t = None;
                }
            }
            if runs.iter().any(|r| r.start >= keep) {
                log::warn!("tweet {}: span beyond max_seq_len dropped from supervision", tweet.id());
            }
            tags
        };
        Ok(TrainingExample {
            id: tweet.id().to_string(),
            ids,
            binary_label: if tweet.is_positive() { 1.0 } else { 0.0 },
            tags,
        })
    }

    pub fn examples(&self, dataset: &Dataset) -> Result<Vec<TrainingExample>> {
        dataset.tweets.iter().map(|t| self.example(t)).collect()
    }

    /// Tags each token by argmax (ties resolve toward `O`, then `B`), decodes
    /// the spans and maps them back onto the original text. A span's score
    /// is the geometric mean of its tokens' chosen-tag probabilities.
    pub fn predict(&self, nt: &NormalizedTweet) -> Prediction {
        if nt.tokens.is_empty() {
            let out = self.forward(&[CLS]).expect("CLS alone is a valid input");
            return Prediction {
                spans: Vec::new(),
                binary_prob: out.binary_prob,
            };
        }
        let ids = self.encode_tokens(nt);
        let out = self.forward(&ids).expect("encoded ids are in range");
        let mut tags = vec![BioTag::O; nt.tokens.len()];
        let mut probs = vec![1.0; nt.tokens.len()];
        for (i, row) in out.tag_dists.rows().into_iter().enumerate() {
            let mut best = BioTag::O;
            for tag in [BioTag::B, BioTag::I] {
                if row[tag.index()] > row[best.index()] {
                    best = tag;
                }
            }
            tags[i] = best;
            probs[i] = row[best.index()];
        }
        let tags = TagSequence(tags);
        let decoded = bio::decode(&nt.normalized_text, &nt.tokens, &tags).expect("one tag per token");
        let (runs, _) = bio::token_runs(&tags.0);
        let spans: Vec<Span> = decoded
            .spans
            .into_iter()
            .zip(runs)
            .map(|(span, run)| {
                span.with_score(span_score(&probs[run]))
            })
            .collect();
        Prediction {
            spans: unproject_spans(&spans, nt),
            binary_prob: out.binary_prob,
        }
    }

    pub fn predict_tweet(&self, tweet: &crate::corpus::Tweet) -> Prediction {
        self.predict(&normalize(tweet))
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Predictions {
        dataset
            .tweets
            .iter()
            .map(|t| (t.id().to_string(), self.predict_tweet(&t.tweet).spans))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tweet;
    use crate::preprocess::tokenize;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 16,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn corpus() -> Dataset {
        let t1 = Tweet::new("1", "u", "took tylenol for my head");
        let s1 = Span::from_text(&t1.text, 5, 12).unwrap();
        let t2 = Tweet::new("2", "u", "nice weather today");
        Dataset::new(
            "toy",
            vec![AnnotatedTweet::new(t1, vec![s1]), AnnotatedTweet::negative(t2)],
        )
        .unwrap()
    }

    fn model(seed: u64) -> Model {
        let ds = corpus();
        let vocab = build_vocab(&ds, 1, false).unwrap();
        Model::new(tiny_config(), vocab, seed).unwrap()
    }

    fn zero_heads(m: &mut Model) {
        let lay = m.net.layout.clone();
        for slot in [lay.cls_w, lay.cls_b, lay.tag_w, lay.tag_b] {
            m.params[slot.range()].fill(0.0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            d_model: 10,
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            max_seq_len: 1,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::paper_scale().lr, 3e-5);
        assert_eq!(TrainConfig::paper_scale().batch_size, 64);
    }

    #[test]
    fn tag_distributions_sum_to_one() {
        let m = model(3);
        let out = m.forward(&[CLS, 3, 4, 5, UNK, 3]).unwrap();
        assert_eq!(out.tag_dists.nrows(), 5);
        for row in out.tag_dists.rows() {
            assert!(close(row.sum(), 1.0, 1e-6));
        }
        assert!((0.0..=1.0).contains(&out.binary_prob));
    }

    #[test]
    fn zero_heads_are_uninformative() {
        let mut m = model(1);
        zero_heads(&mut m);
        let out = m.forward(&[CLS, 3, 4]).unwrap();
        assert_eq!(out.binary_prob, 0.5);
        for p in out.tag_dists.iter() {
            assert!(close(*p, 1.0 / 3.0, 1e-12));
        }
    }

    #[test]
    fn out_of_range_ids_fail() {
        let m = model(1);
        let err = m.forward(&[CLS, m.vocab.len()]).unwrap_err();
        assert!(matches!(err, Error::TokenOutOfRange { .. }));
        assert!(m.forward(&[]).is_err());
        assert!(m.forward(&vec![CLS; 17]).is_err());
    }

    #[test]
    fn permuting_identical_tokens_without_positions() {
        let mut m = model(7);
        let pos = m.net.layout.pos_emb;
        m.params[pos.range()].fill(0.0);
        // Ids 3 and 4 get the same embedding row, so the sequences
        // [CLS a b c] and [CLS b a c] are the same multiset of inputs.
        let tok = m.net.layout.token_emb;
        let row3: Vec<f64> = tok.mat(&m.params).row(3).to_vec();
        tok.mat_mut(&mut m.params).row_mut(4).assign(&ndarray::Array1::from(row3));
        let a = m.forward(&[CLS, 3, 4, 5]).unwrap();
        let b = m.forward(&[CLS, 4, 3, 5]).unwrap();
        for j in 0..3 {
            assert!(close(a.tag_dists[[0, j]], b.tag_dists[[1, j]], 1e-12));
            assert!(close(a.tag_dists[[1, j]], b.tag_dists[[0, j]], 1e-12));
            assert!(close(a.tag_dists[[2, j]], b.tag_dists[[2, j]], 1e-12));
        }
        assert!(close(a.binary_prob, b.binary_prob, 1e-12));
    }

    #[test]
    fn examples_align_with_tokens() {
        let m = model(1);
        let ds = corpus();
        let ex = m.example(&ds.tweets[0]).unwrap();
        assert_eq!(ex.ids[0], CLS);
        assert_eq!(ex.ids.len(), 6);
        assert_eq!(ex.binary_label, 1.0);
        assert_eq!(ex.tags[1], Some(BioTag::B));
        assert_eq!(ex.n_supervised(), 5);
        let neg = m.example(&ds.tweets[1]).unwrap();
        assert_eq!(neg.binary_label, 0.0);
        assert!(neg.tags.iter().all(|t| *t == Some(BioTag::O)));
    }

    #[test]
    fn truncation_masks_cut_spans() {
        let ds = corpus();
        let vocab = build_vocab(&ds, 1, false).unwrap();
        let cfg = ModelConfig {
            max_seq_len: 3,
            ..tiny_config()
        };
        let m = Model::new(cfg, vocab, 0).unwrap();
        let text = "took seizure medication today";
        let t = Tweet::new("x", "u", text);
        let span = Span::from_text(text, 5, 23).unwrap();
        let ex = m.example(&AnnotatedTweet::new(t, vec![span])).unwrap();
        assert_eq!(ex.ids.len(), 3);
        assert_eq!(ex.tags, vec![Some(BioTag::O), None]);
    }

    #[test]
    fn binary_only_tweets_mask_every_tag() {
        let m = model(1);
        let mut t = AnnotatedTweet::negative(Tweet::new("b", "u", "took something"));
        t.binary_only = true;
        let ex = m.example(&t).unwrap();
        assert_eq!(ex.binary_label, 1.0);
        assert_eq!(ex.n_supervised(), 0);
    }

    #[test]
    fn predicted_spans_carry_scores_on_original_text() {
        let mut m = model(2);
        zero_heads(&mut m);
        // Bias the tag head toward B on every token.
        let b = m.net.layout.tag_b;
        m.params[b.offset + BioTag::B.index()] = 2.0;
        let tweet = Tweet::new("1", "u", "got tylenol 🙂 now");
        let p = m.predict_tweet(&tweet);
        assert_eq!(p.spans.len(), tokenize(&normalize(&tweet).normalized_text).len());
        let e2 = 2f64.exp();
        let expected = e2 / (e2 + 2.0);
        for s in &p.spans {
            assert!(close(s.score.unwrap(), expected, 1e-12));
            assert_eq!(crate::corpus::char_slice(&tweet.text, s.start, s.end), Some(s.surface.as_str()));
        }
        assert_eq!(p.binary_prob, 0.5);
    }

    #[test]
    fn all_outside_predicts_nothing() {
        let mut m = model(2);
        zero_heads(&mut m);
        // Uniform distributions tie; ties go to O.
        let p = m.predict_tweet(&Tweet::new("1", "u", "took tylenol"));
        assert!(p.spans.is_empty());
        assert!(m.predict_tweet(&Tweet::new("2", "u", "")).spans.is_empty());
    }

    #[test]
    fn span_score_is_geometric_mean() {
        assert!(close(span_score(&[0.81]), 0.81, 1e-12));
        assert!(close(span_score(&[0.9, 0.9]), 0.9, 1e-12));
        assert!(close(span_score(&[0.5, 0.8]), 0.4f64.sqrt(), 1e-12));
    }

    #[test]
    fn case_insensitive_vocab_predicts_identically() {
        let m = model(5);
        let a = m.predict_tweet(&Tweet::new("1", "u", "TYLENOL for my HEAD"));
        let b = m.predict_tweet(&Tweet::new("1", "u", "tylenol for my head"));
        assert_eq!(a.binary_prob, b.binary_prob);
        let keys = |p: &Prediction| p.spans.iter().map(|s| (s.key(), s.score)).collect::<Vec<_>>();
        assert_eq!(keys(&a), keys(&b));
    }

    #[test]
    fn same_seed_same_init() {
        assert_eq!(model(9), model(9));
        assert_ne!(model(9).params, model(10).params);
    }
}
