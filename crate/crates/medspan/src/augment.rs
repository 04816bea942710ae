//! Training-set augmentation: self-training selection of confident model
//! predictions, and drug substitution within a use category.

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{char_len, char_slice, AnnotatedTweet, Dataset, DrugLexiconEntry, Span, Tweet};
use crate::error::{Error, Result};
use crate::preprocess::normalize;
use crate::weaklabel::fold;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainFilterConfig {
    /// Every span score must be strictly greater than this.
    pub score_threshold: f64,
    pub max_chars: usize,
    pub require_single_mention: bool,
}

impl Default for SelfTrainFilterConfig {
    fn default() -> Self {
        SelfTrainFilterConfig {
            score_threshold: 0.9,
            max_chars: 128,
            require_single_mention: true,
        }
    }
}

impl SelfTrainFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config(format!(
                "score_threshold must lie in [0, 1], got {}",
                self.score_threshold
            )));
        }
        if self.max_chars == 0 {
            return Err(Error::Config("max_chars must be at least 1".into()));
        }
        Ok(())
    }
}

/// Keeps the predicted tweets that are short enough, mention exactly one
/// drug (when required) and whose spans all score above the threshold.
/// Input order is preserved.
pub fn self_train_filter(predicted: &[AnnotatedTweet], cfg: &SelfTrainFilterConfig) -> Result<Vec<AnnotatedTweet>> {
    cfg.validate()?;
    let mut kept = Vec::new();
    for t in predicted {
        let mut confident = true;
        for s in &t.spans {
            let score = s.score.ok_or_else(|| Error::MissingScore(t.id().to_string()))?;
            confident &= score > cfg.score_threshold;
        }
        let short = char_len(t.text()) <= cfg.max_chars;
        let single = !cfg.require_single_mention || t.spans.len() == 1;
        if confident && short && single {
            kept.push(t.clone());
        }
    }
    Ok(kept)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubstitutionConfig {
    pub per_drug: usize,
    pub seed: u64,
    pub dedup: bool,
}

impl Default for SubstitutionConfig {
    fn default() -> Self {
        SubstitutionConfig {
            per_drug: 4,
            seed: 0,
            dedup: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDrug {
    pub name: String,
    pub use_category: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortPool {
    pub name: String,
    pub use_category: String,
    pub requested: usize,
    pub available: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedMention {
    pub tweet_id: String,
    pub surface: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionReport {
    /// Pool tweets per use category.
    pub pool_sizes: BTreeMap<String, usize>,
    /// Pool tweets whose mention has no known category; never sampled.
    pub unresolved_mentions: Vec<UnresolvedMention>,
    /// Lexicon drugs whose category has no pool tweets.
    pub skipped_drugs: Vec<SkippedDrug>,
    /// Lexicon drugs whose category pool is smaller than `per_drug`.
    pub short_pools: Vec<ShortPool>,
    pub n_generated: usize,
    pub n_duplicates: usize,
    pub n_output: usize,
}

fn fold_str(s: &str) -> String {
    s.chars().map(fold).collect()
}

/// Case-folded drug name to use category. The first entry wins when a name
/// is listed twice.
pub fn categories_from_lexicon(lexicon: &[DrugLexiconEntry]) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for e in lexicon {
        map.entry(fold_str(&e.name)).or_insert_with(|| e.use_category.clone());
    }
    map
}

/// Replaces the single span of `tweet` with `name`.
pub fn splice(tweet: &AnnotatedTweet, name: &str, new_id: String) -> AnnotatedTweet {
    let span = &tweet.spans[0];
    let text = tweet.text();
    let before = char_slice(text, 0, span.start).expect("validated span");
    let after = char_slice(text, span.end, char_len(text)).expect("validated span");
    let new_text = format!("{before}{name}{after}");
    let new_span = Span::from_text(&new_text, span.start, span.start + char_len(name)).expect("spliced span");
    AnnotatedTweet::new(Tweet::new(new_id, tweet.tweet.user_id.clone(), new_text), vec![new_span])
}

/// For each lexicon drug, samples up to `per_drug` pool tweets whose
/// mention shares its use category (without replacement) and splices the
/// drug's name over the mention. `source_categories` maps case-folded
/// mention surfaces to categories. Output ids are `aug:<lexicon index>:<id>`.
pub fn substitute_drugs(
    pool: &[AnnotatedTweet],
    lexicon: &[DrugLexiconEntry],
    source_categories: &BTreeMap<String, String>,
    cfg: &SubstitutionConfig,
) -> Result<(Vec<AnnotatedTweet>, SubstitutionReport)> {
    if cfg.per_drug == 0 {
        return Err(Error::Config("per_drug must be at least 1".into()));
    }
    let folded: BTreeMap<String, &String> = source_categories.iter().map(|(k, v)| (fold_str(k), v)).collect();
    let mut report = SubstitutionReport::default();
    let mut by_category: BTreeMap<&str, Vec<&AnnotatedTweet>> = BTreeMap::new();
    for t in pool {
        t.validate()?;
        if t.spans.len() != 1 {
            return Err(Error::InvalidSpan {
                tweet_id: t.id().to_string(),
                message: format!("pool tweets need exactly one span, found {}", t.spans.len()),
            });
        }
        let surface = &t.spans[0].surface;
        match folded.get(&fold_str(surface)) {
            Some(cat) => by_category.entry(cat.as_str()).or_default().push(t),
            None => report.unresolved_mentions.push(UnresolvedMention {
                tweet_id: t.id().to_string(),
                surface: surface.clone(),
            }),
        }
    }
    report.pool_sizes = by_category.iter().map(|(c, v)| (c.to_string(), v.len())).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (drug_idx, entry) in lexicon.iter().enumerate() {
        let candidates = by_category.get(entry.use_category.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        if candidates.is_empty() {
            report.skipped_drugs.push(SkippedDrug {
                name: entry.name.clone(),
                use_category: entry.use_category.clone(),
            });
            continue;
        }
        let k = cfg.per_drug.min(candidates.len());
        if k < cfg.per_drug {
            report.short_pools.push(ShortPool {
                name: entry.name.clone(),
                use_category: entry.use_category.clone(),
                requested: cfg.per_drug,
                available: candidates.len(),
            });
        }
        let mut picks = rand::seq::index::sample(&mut rng, candidates.len(), k).into_vec();
        picks.sort_unstable();
        for i in picks {
            let src = candidates[i];
            let new = splice(src, &entry.name, format!("aug:{drug_idx}:{}", src.id()));
            report.n_generated += 1;
            if cfg.dedup && !seen.insert(normalize(&new.tweet).normalized_text) {
                report.n_duplicates += 1;
                continue;
            }
            out.push(new);
        }
    }
    report.n_output = out.len();
    Ok((out, report))
}

/// The `k` most frequent span surfaces (case-folded), most frequent first,
/// ties in lexicographic order.
pub fn top_mentions(dataset: &Dataset, k: usize) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in &dataset.tweets {
        for s in &t.spans {
            *counts.entry(fold_str(&s.surface)).or_default() += 1;
        }
    }
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(id: &str, text: &str, spans: &[(usize, usize, Option<f64>)]) -> AnnotatedTweet {
        let spans = spans
            .iter()
            .map(|&(s, e, score)| Span {
                score,
                ..Span::from_text(text, s, e).unwrap()
            })
            .collect();
        AnnotatedTweet::new(Tweet::new(id, "u", text), spans)
    }

    fn entry(name: &str, cat: &str) -> DrugLexiconEntry {
        DrugLexiconEntry {
            name: name.into(),
            use_category: cat.into(),
        }
    }

    #[test]
    fn filter_thresholds() {
        let cfg = SelfTrainFilterConfig::default();
        let text = "took tylenol for my head";
        let keep = scored("a", text, &[(5, 12, Some(0.95))]);
        let edge = scored("b", text, &[(5, 12, Some(0.90))]);
        let two = scored("c", text, &[(0, 4, Some(0.99)), (5, 12, Some(0.99))]);
        let long_text = format!("tylenol {}", "x".repeat(130));
        let long = scored("d", &long_text, &[(0, 7, Some(0.99))]);
        let out = self_train_filter(&[keep.clone(), edge, two.clone(), long], &cfg).unwrap();
        assert_eq!(out, vec![keep.clone()]);
        let relaxed = SelfTrainFilterConfig {
            require_single_mention: false,
            ..cfg.clone()
        };
        assert_eq!(self_train_filter(&[two.clone()], &relaxed).unwrap(), vec![two]);
        assert_eq!(self_train_filter(&out, &cfg).unwrap(), out);
    }

    #[test]
    fn filter_requires_scores() {
        let t = scored("a", "took tylenol", &[(5, 12, None)]);
        let err = self_train_filter(&[t], &SelfTrainFilterConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingScore(id) if id == "a"));
    }

    #[test]
    fn splice_arithmetic() {
        let src = scored("1", "took tylenol for my head", &[(5, 12, None)]);
        let out = splice(&src, "aleve", "x".into());
        assert_eq!(out.text(), "took aleve for my head");
        assert_eq!(out.spans[0].key(), (5, 10));
        assert_eq!(out.spans[0].surface, "aleve");
    }

    #[test]
    fn substitution_by_category() {
        let pool = vec![
            scored("1", "took tylenol for my head", &[(5, 12, None)]),
            scored("2", "Tylenol helps", &[(0, 7, None)]),
            scored("3", "need my zoloft", &[(8, 14, None)]),
            scored("4", "some mysterydrug here", &[(5, 16, None)]),
        ];
        let lexicon = vec![entry("aleve", "pain"), entry("prozac", "mood"), entry("insulin", "diabetes")];
        let mut cats = categories_from_lexicon(&[entry("tylenol", "pain"), entry("zoloft", "mood")]);
        cats.insert("ZOLOFT".into(), "mood".into());
        let cfg = SubstitutionConfig {
            per_drug: 4,
            ..SubstitutionConfig::default()
        };
        let (out, report) = substitute_drugs(&pool, &lexicon, &cats, &cfg).unwrap();
        let texts: Vec<&str> = out.iter().map(|t| t.text()).collect();
        assert_eq!(texts, ["took aleve for my head", "aleve helps", "need my prozac"]);
        assert_eq!(out[0].id(), "aug:0:1");
        assert_eq!(report.pool_sizes["pain"], 2);
        assert_eq!(report.skipped_drugs, vec![SkippedDrug { name: "insulin".into(), use_category: "diabetes".into() }]);
        assert_eq!(report.unresolved_mentions.len(), 1);
        assert_eq!(report.short_pools.len(), 2);
        assert_eq!(report.n_output, 3);
    }

    #[test]
    fn dedup_and_determinism() {
        let pool = vec![
            scored("1", "took tylenol", &[(5, 12, None)]),
            scored("2", "took advil", &[(5, 10, None)]),
            scored("3", "advil again", &[(0, 5, None)]),
        ];
        let cats = categories_from_lexicon(&[entry("tylenol", "pain"), entry("advil", "pain")]);
        let lexicon = vec![entry("aleve", "pain")];
        let cfg = SubstitutionConfig {
            per_drug: 3,
            seed: 9,
            dedup: true,
        };
        let (a, ra) = substitute_drugs(&pool, &lexicon, &cats, &cfg).unwrap();
        let (b, _) = substitute_drugs(&pool, &lexicon, &cats, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.n_generated, 3);
        assert_eq!(ra.n_duplicates, 1);
        assert_eq!(a.len(), 2);
        let no_dedup = SubstitutionConfig { dedup: false, ..cfg };
        assert_eq!(substitute_drugs(&pool, &lexicon, &cats, &no_dedup).unwrap().0.len(), 3);
    }

    #[test]
    fn pool_tweets_need_one_span() {
        let pool = vec![scored("1", "nothing here", &[])];
        assert!(substitute_drugs(&pool, &[], &BTreeMap::new(), &SubstitutionConfig::default()).is_err());
        let (out, _) = substitute_drugs(&[], &[], &BTreeMap::new(), &SubstitutionConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn top_mentions_orders_by_count() {
        let ds = Dataset::new(
            "d",
            vec![
                scored("1", "tylenol and advil", &[(0, 7, None), (12, 17, None)]),
                scored("2", "Tylenol", &[(0, 7, None)]),
            ],
        )
        .unwrap();
        assert_eq!(top_mentions(&ds, 5), vec![("tylenol".to_string(), 2), ("advil".to_string(), 1)]);
        assert_eq!(top_mentions(&ds, 1).len(), 1);
    }
}
