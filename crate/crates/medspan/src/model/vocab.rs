use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::preprocess::normalize;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[CLS]"];

/// Word-level vocabulary. Ids 0, 1, 2 are `[PAD]`, `[UNK]`, `[CLS]`; the
/// rest follow descending corpus frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    case_sensitive: bool,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    case_sensitive: bool,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_tokens(r.tokens, r.case_sensitive)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            tokens: v.tokens,
            case_sensitive: v.case_sensitive,
        }
    }
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>, case_sensitive: bool) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab {
            tokens,
            index,
            case_sensitive,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn case_sensitive(&self) -> bool {
        self.case_sensitive
    }

    fn key(&self, token: &str) -> String {
        if self.case_sensitive {
            token.to_string()
        } else {
            token.to_lowercase()
        }
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(&self.key(token)).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// Builds a vocabulary from the normalized tokens of `dataset`.
pub fn build_vocab(dataset: &Dataset, min_freq: usize, case_sensitive: bool) -> Result<Vocab> {
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("cannot build a vocabulary from an empty dataset".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in &dataset.tweets {
        for tok in normalize(&t.tweet).tokens {
            let key = if case_sensitive {
                tok.surface
            } else {
                tok.surface.to_lowercase()
            };
            *counts.entry(key).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq.max(1) && !RESERVED.contains(&t.as_str()))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(entries.into_iter().map(|(t, _)| t))
        .collect();
    Ok(Vocab::from_tokens(tokens, case_sensitive))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedTweet, Tweet};

    fn corpus(texts: &[&str]) -> Dataset {
        let tweets = texts
            .iter()
            .enumerate()
            .map(|(i, t)| AnnotatedTweet::negative(Tweet::new(i.to_string(), "u", *t)))
            .collect();
        Dataset::new("c", tweets).unwrap()
    }

    #[test]
    fn min_freq_cutoff() {
        let v = build_vocab(&corpus(&["a a b"]), 2, true).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.token(CLS), Some("[CLS]"));
    }

    #[test]
    fn uncased_shares_ids() {
        let v = build_vocab(&corpus(&["Tylenol tylenol"]), 1, false).unwrap();
        assert_eq!(v.id("Tylenol"), v.id("tylenol"));
        assert_eq!(v.id("TYLENOL"), 3);
        let v = build_vocab(&corpus(&["Tylenol tylenol"]), 1, true).unwrap();
        assert_ne!(v.id("Tylenol"), v.id("tylenol"));
    }

    #[test]
    fn empty_corpus_fails() {
        assert!(build_vocab(&Dataset::default(), 1, false).is_err());
    }

    #[test]
    fn deterministic_order() {
        let a = build_vocab(&corpus(&["b a c a", "c b"]), 1, true).unwrap();
        let b = build_vocab(&corpus(&["c b", "b a c a"]), 1, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.token(3), Some("a"));
    }
}
