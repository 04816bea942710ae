//! Conversion between char-offset spans and per-token BIO tags.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::preprocess::Token;

/// One entity class, so no type suffixes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BioTag {
    B,
    I,
    O,
}

impl BioTag {
    pub const ALL: [BioTag; 3] = [BioTag::B, BioTag::I, BioTag::O];

    pub fn index(self) -> usize {
        match self {
            BioTag::B => 0,
            BioTag::I => 1,
            BioTag::O => 2,
        }
    }

    pub fn from_index(i: usize) -> BioTag {
        BioTag::ALL[i]
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BioTag::B => "B",
            BioTag::I => "I",
            BioTag::O => "O",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSequence(pub Vec<BioTag>);

impl TagSequence {
    pub fn all_outside(n: usize) -> Self {
        TagSequence(vec![BioTag::O; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// False iff some `I` follows an `O` or opens the sequence.
    pub fn is_valid(&self) -> bool {
        let mut prev = BioTag::O;
        for &tag in &self.0 {
            if tag == BioTag::I && prev == BioTag::O {
                return false;
            }
            prev = tag;
        }
        true
    }
}

/// Tags each token: `B` on the first token of a span, `I` on the rest,
/// `O` elsewhere. Span boundaries must coincide with token boundaries.
pub fn encode(tokens: &[Token], spans: &[Span]) -> Result<TagSequence> {
    let mut tags = TagSequence::all_outside(tokens.len());
    for span in spans {
        let misaligned = || Error::Alignment {
            start: span.start,
            end: span.end,
            surface: span.surface.clone(),
        };
        let first = tokens
            .iter()
            .position(|t| t.start == span.start)
            .ok_or_else(misaligned)?;
        let last = tokens[first..]
            .iter()
            .position(|t| t.end == span.end)
            .map(|k| first + k)
            .ok_or_else(misaligned)?;
        if tags.0[first..=last].iter().any(|&t| t != BioTag::O) {
            return Err(Error::InvalidSpan {
                tweet_id: String::new(),
                message: format!("span [{}, {}) overlaps another span", span.start, span.end),
            });
        }
        tags.0[first] = BioTag::B;
        for t in &mut tags.0[first + 1..=last] {
            *t = BioTag::I;
        }
    }
    Ok(tags)
}

/// Token index ranges of the entity runs in `tags`, plus the positions of
/// any `I` tags that had to be read as `B`.
pub fn token_runs(tags: &[BioTag]) -> (Vec<Range<usize>>, Vec<usize>) {
    let mut runs = Vec::new();
    let mut repaired = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            BioTag::B => {
                if let Some(s) = open.take() {
                    runs.push(s..i);
                }
                open = Some(i);
            }
            BioTag::I => {
                if open.is_none() {
                    repaired.push(i);
                    open = Some(i);
                }
            }
            BioTag::O => {
                if let Some(s) = open.take() {
                    runs.push(s..i);
                }
            }
        }
    }
    if let Some(s) = open {
        runs.push(s..tags.len());
    }
    (runs, repaired)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub spans: Vec<Span>,
    /// Token indices whose `I` tag was repaired to `B`.
    pub repaired: Vec<usize>,
}

/// Inverse of [`encode`]. An orphan `I` starts a new span and is reported in
/// [`Decoded::repaired`].
pub fn decode(text: &str, tokens: &[Token], tags: &TagSequence) -> Result<Decoded> {
    if tokens.len() != tags.len() {
        return Err(Error::LengthMismatch {
            expected: tokens.len(),
            actual: tags.len(),
        });
    }
    let (runs, repaired) = token_runs(&tags.0);
    for &i in &repaired {
        log::debug!("repairing orphan I tag at token {i} ({:?})", tokens[i].surface);
    }
    let spans = runs
        .into_iter()
        .map(|r| {
            Span::from_text(text, tokens[r.start].start, tokens[r.end - 1].end)
                .expect("token offsets lie inside the text")
        })
        .collect();
    Ok(Decoded { spans, repaired })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::tokenize;
    use proptest::prelude::*;
    use BioTag::*;

    fn span(text: &str, start: usize, end: usize) -> Span {
        Span::from_text(text, start, end).unwrap()
    }

    #[test]
    fn encode_single_token() {
        let text = "I took Tylenol";
        let tokens = tokenize(text);
        let tags = encode(&tokens, &[span(text, 7, 14)]).unwrap();
        assert_eq!(tags.0, [O, O, B]);
        assert_eq!(encode(&tokens, &[]).unwrap().0, [O, O, O]);
    }

    #[test]
    fn encode_multi_token() {
        let text = "seizure medication";
        let tags = encode(&tokenize(text), &[span(text, 0, 18)]).unwrap();
        assert_eq!(tags.0, [B, I]);
    }

    #[test]
    fn encode_rejects_misalignment() {
        let text = "took tylenolpm today";
        let tokens = tokenize(text);
        // ends inside "tylenolpm"
        let err = encode(&tokens, &[span(text, 5, 12)]).unwrap_err();
        assert!(matches!(err, Error::Alignment { start: 5, end: 12, .. }), "{err}");
        // starts inside "tylenolpm"
        assert!(encode(&tokens, &[span(text, 7, 14)]).is_err());
        // covers only whitespace
        assert!(encode(&tokenize("a  b"), &[span("a  b", 1, 2)]).is_err());
    }

    #[test]
    fn decode_examples() {
        let text = "I took Tylenol";
        let tokens = tokenize(text);
        let d = decode(text, &tokens, &TagSequence(vec![O, O, B])).unwrap();
        assert_eq!(d.spans, [span(text, 7, 14)]);

        let d = decode(text, &tokens, &TagSequence(vec![B, I, O])).unwrap();
        assert_eq!(d.spans, [span(text, 0, 6)]);

        let d = decode(text, &tokens, &TagSequence(vec![O, I, O])).unwrap();
        assert_eq!(d.spans, [span(text, 2, 6)]);
        assert_eq!(d.repaired, [1]);

        assert!(decode(text, &tokens, &TagSequence(vec![O])).is_err());
    }

    #[test]
    fn adjacent_b_tags_give_separate_spans() {
        let text = "advil tylenol";
        let d = decode(text, &tokenize(text), &TagSequence(vec![B, B])).unwrap();
        assert_eq!(d.spans.len(), 2);
    }

    #[test]
    fn validity() {
        assert!(TagSequence(vec![B, I, O, B]).is_valid());
        assert!(!TagSequence(vec![I]).is_valid());
        assert!(!TagSequence(vec![B, O, I]).is_valid());
    }

    proptest! {
        #[test]
        fn decode_never_overlaps(tags in prop::collection::vec(0usize..3, 0..30)) {
            let tags: Vec<BioTag> = tags.into_iter().map(BioTag::from_index).collect();
            let text = vec!["w"; tags.len()].join(" ");
            let d = decode(&text, &tokenize(&text), &TagSequence(tags)).unwrap();
            for w in d.spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
        }
    }
}
