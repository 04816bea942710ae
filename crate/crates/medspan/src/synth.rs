//! Deterministic synthetic corpora in the shape of the real inputs: a
//! span-annotated tweet set with dev and test splits, a binary-labeled set
//! with drug names but no offsets, an unlabeled pool for self-training and
//! a drug lexicon with use categories.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{char_len, save_jsonl, save_lexicon, AnnotatedTweet, Dataset, DrugLexiconEntry, Span, Tweet};
use crate::error::{Error, Result};
use crate::weaklabel::{save_binary_tsv, BinaryLabeledTweet};

/// `(name, use category, appears in the labeled data)`. Drugs with `false`
/// only occur in the lexicon and the held-out splits.
const DRUGS: &[(&str, &str, bool)] = &[
    ("tylenol", "pain", true),
    ("advil", "pain", true),
    ("ibuprofen", "pain", true),
    ("aspirin", "pain", true),
    ("aleve", "pain", false),
    ("excedrin", "pain", false),
    ("melatonin", "sleep", true),
    ("ambien", "sleep", true),
    ("zzzquil", "sleep", false),
    ("unisom", "sleep", false),
    ("zoloft", "mood", true),
    ("prozac", "mood", true),
    ("lexapro", "mood", false),
    ("wellbutrin", "mood", false),
    ("zyrtec", "allergy", true),
    ("claritin", "allergy", true),
    ("allegra", "allergy", false),
    ("flonase", "allergy", false),
    ("tums", "heartburn", true),
    ("nexium", "heartburn", true),
    ("pepcid", "heartburn", false),
    ("prilosec", "heartburn", false),
    ("nyquil", "cold", true),
    ("dayquil", "cold", true),
    ("mucinex", "cold", false),
    ("sudafed", "cold", false),
    ("vitamin d", "supplement", true),
    ("fish oil", "supplement", true),
    ("vitamin c", "supplement", false),
    ("magnesium", "supplement", false),
    ("plan b", "birth control", true),
    ("yaz", "birth control", false),
    ("metformin", "diabetes", true),
    ("insulin", "diabetes", false),
    ("albuterol", "asthma", true),
    ("symbicort", "asthma", false),
];

const ONE_DRUG: &[&str] = &[
    "just took {D} for this headache",
    "{D} is not working at all",
    "need more {D} asap",
    "ran out of {D} again",
    "does {D} make anyone else sleepy",
    "the doctor put me on {D}",
    "{D} and coffee , breakfast of champions",
    "taking {D} before bed",
    "my mom swears by {D}",
    "finally got my {D} refill",
    "why does {D} taste so bad",
    "still awake even after the {D}",
    "popped two {D} and went back to bed",
    "is it safe to mix {D} with wine",
    "forgot to take my {D} this morning",
    "thank god for {D} honestly",
];

const TWO_DRUGS: &[&str] = &[
    "{D} or {E} ? which one works better",
    "took {D} and {E} today",
    "switched from {D} to {E} last week",
];

const NEGATIVE: &[&str] = &[
    "nice weather today",
    "going to the gym later",
    "this traffic is killing me",
    "my head hurts so bad",
    "watching the game tonight",
    "need coffee right now",
    "doctor appointment tomorrow morning",
    "cannot wait for the weekend",
    "feeling sick again ugh",
    "the pharmacy line is so long",
    "slept for twelve hours straight",
    "my back is killing me today",
    "who else is still awake",
    "new phone who dis",
];

const HANDLES: &[&str] = &["@jess_m", "@drbob", "@night_owl", "@sam"];
const URLS: &[&str] = &["https://t.co/x1Yz", "http://bit.ly/3abc", "www.health.com/faq"];
const TAILS: &[&str] = &["#health", "#ugh", "😩", "😂", ":(", ":-)", "lol", "smh"];
const FILLER: &str = "and honestly i have been dealing with this for weeks now and nothing seems to help so if anyone has advice please let me know";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_binary: usize,
    pub n_pool: usize,
    pub positive_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 2021,
            n_train: 50,
            n_dev: 30,
            n_test: 40,
            n_binary: 40,
            n_pool: 150,
            positive_rate: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthBundle {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub binary: Vec<BinaryLabeledTweet>,
    /// Unlabeled tweets, each mentioning one drug.
    pub pool: Dataset,
    pub lexicon: Vec<DrugLexiconEntry>,
}

/// File names written by [`write_bundle`].
pub const TRAIN_FILE: &str = "2021.jsonl";
pub const DEV_FILE: &str = "2021_dev.jsonl";
pub const TEST_FILE: &str = "2021_test.jsonl";
pub const BINARY_FILE: &str = "2018.tsv";
pub const POOL_FILE: &str = "pool.jsonl";
pub const LEXICON_FILE: &str = "lexicon.tsv";

struct Builder {
    text: String,
    spans: Vec<(usize, usize)>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            text: String::new(),
            spans: Vec::new(),
        }
    }

    fn push(&mut self, s: &str) {
        if !self.text.is_empty() && !s.is_empty() {
            self.text.push(' ');
        }
        self.text.push_str(s);
    }

    fn push_drug(&mut self, s: &str) {
        if !self.text.is_empty() {
            self.text.push(' ');
        }
        let start = char_len(&self.text);
        self.text.push_str(s);
        self.spans.push((start, start + char_len(s)));
    }
}

fn styled(name: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..10) {
        0 => name.to_uppercase(),
        1..=3 => {
            let mut c = name.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
        }
        _ => name.to_string(),
    }
}

/// A one-character typo: the last letter doubled.
fn misspell(name: &str) -> String {
    let last = name.chars().last().unwrap_or('x');
    format!("{name}{last}")
}

struct Sampler<'a> {
    rng: ChaCha8Rng,
    drugs: Vec<&'a (&'static str, &'static str, bool)>,
}

impl Sampler<'_> {
    /// Builds one tweet; `drugs` are spliced into a template with one slot
    /// per drug, or a negative template when empty.
    fn tweet(&mut self, drugs: &[String], long: bool) -> (String, Vec<(usize, usize)>) {
        let rng = &mut self.rng;
        let mut b = Builder::new();
        if rng.random_bool(0.25) {
            b.push(HANDLES.choose(rng).unwrap());
        }
        let template = match drugs.len() {
            0 => *NEGATIVE.choose(rng).unwrap(),
            1 => *ONE_DRUG.choose(rng).unwrap(),
            _ => *TWO_DRUGS.choose(rng).unwrap(),
        };
        let mut slot = 0;
        for word in template.split(' ') {
            match word {
                "{D}" | "{E}" => {
                    let name = styled(&drugs[slot], rng);
                    b.push_drug(&name);
                    slot += 1;
                }
                w => b.push(w),
            }
        }
        if long {
            b.push(FILLER);
        }
        if rng.random_bool(0.2) {
            b.push(URLS.choose(rng).unwrap());
        }
        if rng.random_bool(0.35) {
            b.push(TAILS.choose(rng).unwrap());
        }
        (b.text, b.spans)
    }

    fn drug(&mut self, seen_only: bool) -> &'static str {
        loop {
            let d = self.drugs.choose(&mut self.rng).unwrap();
            if d.2 || !seen_only {
                return d.0;
            }
        }
    }

    fn annotated(&mut self, prefix: &str, n: usize, rate: f64, seen_only: bool) -> Vec<AnnotatedTweet> {
        (0..n)
            .map(|i| {
                let k = if !self.rng.random_bool(rate) {
                    0
                } else if self.rng.random_bool(0.15) {
                    2
                } else {
                    1
                };
                let mut names: Vec<String> = Vec::new();
                while names.len() < k {
                    let d = self.drug(seen_only).to_string();
                    if !names.contains(&d) {
                        names.push(d);
                    }
                }
                let (text, offsets) = self.tweet(&names, false);
                let spans = offsets
                    .into_iter()
                    .map(|(s, e)| Span::from_text(&text, s, e).expect("builder offsets"))
                    .collect();
                let user = format!("u{}", self.rng.random_range(100..1000));
                AnnotatedTweet::new(Tweet::new(format!("{prefix}-{:04}", i + 1), user, text), spans)
            })
            .collect()
    }
}

/// Generates every synthetic input from `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthBundle> {
    if !(0.0..=1.0).contains(&cfg.positive_rate) {
        return Err(Error::Config(format!("positive_rate must lie in [0, 1], got {}", cfg.positive_rate)));
    }
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        drugs: DRUGS.iter().collect(),
    };
    let rate = cfg.positive_rate;
    let train = Dataset::new("2021", s.annotated("t21", cfg.n_train, rate, true))?;
    let dev = Dataset::new("2021_dev", s.annotated("d21", cfg.n_dev, rate, false))?;
    let test = Dataset::new("2021_test", s.annotated("e21", cfg.n_test, rate, false))?;

    let mut binary = Vec::with_capacity(cfg.n_binary);
    for i in 0..cfg.n_binary {
        let id = format!("t18-{:04}", i + 1);
        let user = format!("u{}", s.rng.random_range(100..1000));
        if !s.rng.random_bool(rate) {
            let (text, _) = s.tweet(&[], false);
            binary.push(BinaryLabeledTweet {
                tweet: Tweet::new(id, user, text),
                label: false,
                names: Vec::new(),
            });
            continue;
        }
        let drug = s.drug(true);
        // Most names appear verbatim; some only with a typo (recoverable by
        // partial matching) and some not at all.
        let (surface, name) = match s.rng.random_range(0..10) {
            0..=5 => (drug.to_string(), drug.to_string()),
            6..=8 => (misspell(drug), drug.to_string()),
            _ => (drug.to_string(), "acetaminophen".to_string()),
        };
        let (text, _) = s.tweet(&[surface], false);
        binary.push(BinaryLabeledTweet {
            tweet: Tweet::new(id, user, text),
            label: true,
            names: vec![name],
        });
    }

    let pool_tweets = (0..cfg.n_pool)
        .map(|i| {
            let drug = s.drug(true).to_string();
            let long = s.rng.random_bool(0.1);
            let (text, _) = s.tweet(&[drug], long);
            AnnotatedTweet::negative(Tweet::new(format!("pool-{:04}", i + 1), "u0", text))
        })
        .collect();
    let pool = Dataset::new("pool", pool_tweets)?;

    let lexicon = DRUGS
        .iter()
        .map(|(name, cat, _)| DrugLexiconEntry {
            name: name.to_string(),
            use_category: cat.to_string(),
        })
        .collect();
    Ok(SynthBundle {
        train,
        dev,
        test,
        binary,
        pool,
        lexicon,
    })
}

pub fn write_bundle(bundle: &SynthBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_jsonl(&bundle.train, dir.join(TRAIN_FILE))?;
    save_jsonl(&bundle.dev, dir.join(DEV_FILE))?;
    save_jsonl(&bundle.test, dir.join(TEST_FILE))?;
    save_binary_tsv(&bundle.binary, dir.join(BINARY_FILE))?;
    save_jsonl(&bundle.pool, dir.join(POOL_FILE))?;
    save_lexicon(&bundle.lexicon, dir.join(LEXICON_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bio::encode;
    use crate::preprocess::normalize_annotated;

    #[test]
    fn deterministic_and_sized() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a.train.len(), 50);
        assert_eq!(a.binary.len(), cfg.n_binary);
        assert!(a.pool.tweets.iter().all(|t| t.spans.is_empty()));
        let other = generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.train, other.train);
    }

    #[test]
    fn spans_survive_preprocessing() {
        let b = generate(&SynthConfig::default()).unwrap();
        for ds in [&b.train, &b.dev, &b.test] {
            ds.validate().unwrap();
            for t in &ds.tweets {
                let (projected, nt, warnings) = normalize_annotated(t);
                assert!(warnings.is_empty(), "{}", t.id());
                assert_eq!(projected.spans.len(), t.spans.len());
                encode(&nt.tokens, &projected.spans).unwrap();
            }
        }
    }

    #[test]
    fn held_out_drugs_stay_out_of_training() {
        let b = generate(&SynthConfig::default()).unwrap();
        let held: Vec<&str> = DRUGS.iter().filter(|d| !d.2).map(|d| d.0).collect();
        for t in &b.train.tweets {
            for s in &t.spans {
                assert!(!held.contains(&s.surface.to_lowercase().as_str()), "{}", s.surface);
            }
        }
    }
}
