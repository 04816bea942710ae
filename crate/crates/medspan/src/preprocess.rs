//! Rule-based tweet tokenization and normalization.
//!
//! Normalization runs in three passes over the raw tweet:
//!
//! 1. characters outside the allowed set (letters, digits, ASCII punctuation,
//!    whitespace) are deleted;
//! 2. the filtered text is tokenized;
//! 3. URL tokens become `URL`, user mentions become `@USER`, and hashtags are
//!    split into `#` tokens followed by the tag.
//!
//! Every step is recorded in an [`OffsetMap`], so gold spans annotated on the
//! raw text can be carried into the normalized text and predictions can be
//! carried back.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{char_slice, AnnotatedTweet, Span, Tweet};

/// Emoticons recognized as single tokens. All of them start with a
/// punctuation character so they never swallow the start of a word.
pub const EMOTICONS: &[&str] = &[
    ":)", ":-)", ":(", ":-(", ":D", ":-D", ":P", ":-P", ":p", ":-p", ":/", ":-/", ":|", ":-|",
    ":o", ":O", ":-o", ":-O", ":'(", ":')", ":*", ":-*", ":]", ":[", ":3", ":>", ":<", ":$",
    ":S", ":@", ";)", ";-)", ";(", ";D", ";P", ";p", "=)", "=(", "=D", "=P", "=/", ">:(",
    ">:)", "<3", "</3", "^_^", "^^", "-_-", "(:", "):", ":\\",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Url,
    Emoticon,
    Mention,
    Hashtag,
    Email,
    Word,
    Number,
    Ellipsis,
    Other,
}

/// A token with half-open char offsets into the text it was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub kind: TokenKind,
}

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    let mut emoticons: Vec<&str> = EMOTICONS.to_vec();
    emoticons.sort_by_key(|e| std::cmp::Reverse(e.chars().count()));
    let emoticons = emoticons
        .iter()
        .map(|e| regex::escape(e))
        .collect::<Vec<_>>()
        .join("|");
    let pattern = [
        r"(?P<url>(?i:https?://|www\.)\S+)".to_string(),
        format!("(?P<emo>{emoticons})"),
        r"(?P<mention>@\w+)".to_string(),
        r"(?P<hashtag>\#+\w[\w'\-]*\w)".to_string(),
        r"(?P<email>[\w.+\-]+@[\w\-]+\.(?:[\w\-]\.?)+[\w\-])".to_string(),
        r"(?P<word>[^\W\d_](?:[^\W\d_]|['\-_])+[^\W\d_])".to_string(),
        r"(?P<number>[+\-]?\d+[,/.:\-]\d+[+\-]?)".to_string(),
        r"(?P<alnum>\w+)".to_string(),
        r"(?P<ellipsis>\.\.+)".to_string(),
        r"(?P<other>\S)".to_string(),
    ]
    .join("|");
    Regex::new(&pattern).expect("token pattern compiles")
});

const GROUPS: &[(&str, TokenKind)] = &[
    ("url", TokenKind::Url),
    ("emo", TokenKind::Emoticon),
    ("mention", TokenKind::Mention),
    ("hashtag", TokenKind::Hashtag),
    ("email", TokenKind::Email),
    ("word", TokenKind::Word),
    ("number", TokenKind::Number),
    ("alnum", TokenKind::Word),
    ("ellipsis", TokenKind::Ellipsis),
    ("other", TokenKind::Other),
];

/// Splits `text` into tokens. Total: every non-whitespace char belongs to
/// exactly one token, and no token contains whitespace.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut byte_pos = 0;
    let mut char_pos = 0;
    for caps in TOKEN_RE.captures_iter(text) {
        let m = caps.get(0).expect("group 0 always participates");
        char_pos += text[byte_pos..m.start()].chars().count();
        let len = m.as_str().chars().count();
        let kind = GROUPS
            .iter()
            .find(|(name, _)| caps.name(name).is_some())
            .map(|&(_, kind)| kind)
            .unwrap_or(TokenKind::Other);
        tokens.push(Token {
            surface: m.as_str().to_string(),
            start: char_pos,
            end: char_pos + len,
            kind,
        });
        char_pos += len;
        byte_pos = m.end();
    }
    tokens
}

/// Characters that survive normalization.
pub fn is_allowed_char(c: char) -> bool {
    c.is_alphanumeric() || c.is_ascii_punctuation() || c.is_whitespace()
}

pub const URL_PLACEHOLDER: &str = "URL";
pub const USER_PLACEHOLDER: &str = "@USER";

/// What normalization did to one original character.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CharFate {
    Kept,
    Deleted,
    /// Part of a URL or mention that was replaced by a placeholder.
    Replaced,
}

/// Correspondence between original and normalized char offsets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetMap {
    /// Boundary map, `len(original) + 1` entries, monotone non-decreasing.
    to_normalized: Vec<usize>,
    fate: Vec<CharFate>,
    /// For each normalized char, the original char range it came from.
    origin: Vec<(usize, usize)>,
}

impl OffsetMap {
    /// Normalized offset of the original boundary `offset`.
    pub fn map(&self, offset: usize) -> usize {
        self.to_normalized[offset]
    }

    pub fn fate(&self, original_char: usize) -> CharFate {
        self.fate[original_char]
    }

    pub fn original_len(&self) -> usize {
        self.fate.len()
    }

    pub fn normalized_len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_identity(&self) -> bool {
        self.fate.len() == self.origin.len()
            && self.fate.iter().all(|f| *f == CharFate::Kept)
            && self.origin.iter().enumerate().all(|(j, &(a, b))| a == j && b == j + 1)
    }

    /// Original char range covering normalized range `[start, end)`.
    pub fn to_original(&self, start: usize, end: usize) -> (usize, usize) {
        debug_assert!(start < end && end <= self.origin.len());
        (self.origin[start].0, self.origin[end - 1].1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTweet {
    pub original: Tweet,
    pub normalized_text: String,
    pub tokens: Vec<Token>,
    pub offset_map: OffsetMap,
}

/// Normalizes a tweet. Total; see the module docs for the passes.
pub fn normalize(tweet: &Tweet) -> NormalizedTweet {
    let original: Vec<char> = tweet.text.chars().collect();
    let n = original.len();

    let mut fate = vec![CharFate::Deleted; n];
    let mut filtered = String::with_capacity(tweet.text.len());
    let mut filtered_to_original = Vec::with_capacity(n);
    for (i, &c) in original.iter().enumerate() {
        if is_allowed_char(c) {
            fate[i] = CharFate::Kept;
            filtered.push(c);
            filtered_to_original.push(i);
        }
    }
    let filtered_chars: Vec<char> = filtered.chars().collect();

    let mut text = String::with_capacity(filtered.len());
    let mut origin: Vec<(usize, usize)> = Vec::with_capacity(filtered_chars.len());
    let mut tokens = Vec::new();
    let mut cursor = 0;

    let copy_kept = |from: usize, to: usize, text: &mut String, origin: &mut Vec<(usize, usize)>| {
        for k in from..to {
            let i = filtered_to_original[k];
            text.push(filtered_chars[k]);
            origin.push((i, i + 1));
        }
    };

    for token in tokenize(&filtered) {
        copy_kept(cursor, token.start, &mut text, &mut origin);
        cursor = token.end;
        let out_start = origin.len();
        match token.kind {
            TokenKind::Url | TokenKind::Mention => {
                let placeholder = if token.kind == TokenKind::Url {
                    URL_PLACEHOLDER
                } else {
                    USER_PLACEHOLDER
                };
                let a = filtered_to_original[token.start];
                let b = filtered_to_original[token.end - 1] + 1;
                for f in &mut fate[a..b] {
                    *f = CharFate::Replaced;
                }
                for c in placeholder.chars() {
                    text.push(c);
                    origin.push((a, b));
                }
                tokens.push(Token {
                    surface: placeholder.to_string(),
                    start: out_start,
                    end: origin.len(),
                    kind: token.kind,
                });
            }
            TokenKind::Hashtag => {
                copy_kept(token.start, token.end, &mut text, &mut origin);
                let hashes = token.surface.chars().take_while(|&c| c == '#').count();
                for h in 0..hashes {
                    tokens.push(Token {
                        surface: "#".into(),
                        start: out_start + h,
                        end: out_start + h + 1,
                        kind: TokenKind::Other,
                    });
                }
                tokens.push(Token {
                    surface: token.surface.chars().skip(hashes).collect(),
                    start: out_start + hashes,
                    end: origin.len(),
                    kind: TokenKind::Word,
                });
            }
            _ => {
                copy_kept(token.start, token.end, &mut text, &mut origin);
                tokens.push(Token {
                    start: out_start,
                    end: origin.len(),
                    ..token
                });
            }
        }
    }
    copy_kept(cursor, filtered_chars.len(), &mut text, &mut origin);

    // Boundary map: each original char maps to the first normalized char
    // produced from it; deleted chars take the position of the next output.
    let mut to_normalized = vec![usize::MAX; n + 1];
    for (j, &(a, b)) in origin.iter().enumerate() {
        for slot in &mut to_normalized[a..b] {
            if *slot == usize::MAX {
                *slot = j;
            }
        }
    }
    let mut next = origin.len();
    for slot in to_normalized.iter_mut().rev() {
        if *slot == usize::MAX {
            *slot = next;
        } else {
            next = *slot;
        }
    }

    NormalizedTweet {
        original: tweet.clone(),
        normalized_text: text,
        tokens,
        offset_map: OffsetMap {
            to_normalized,
            fate,
            origin,
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    /// Every character of the span was deleted.
    Erased,
    /// The span touches a URL or mention that was replaced by a placeholder.
    OverlapsReplacement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionWarning {
    pub tweet_id: String,
    pub span: Span,
    pub reason: DropReason,
}

/// Maps spans on the original text into the normalized text. Spans that do
/// not survive normalization are dropped and reported.
pub fn project_spans(spans: &[Span], nt: &NormalizedTweet) -> (Vec<Span>, Vec<ProjectionWarning>) {
    let map = &nt.offset_map;
    let mut out = Vec::with_capacity(spans.len());
    let mut warnings = Vec::new();
    for span in spans {
        let fates = &map.fate[span.start..span.end];
        let reason = if fates.contains(&CharFate::Replaced) {
            Some(DropReason::OverlapsReplacement)
        } else if !fates.contains(&CharFate::Kept) {
            Some(DropReason::Erased)
        } else {
            None
        };
        if let Some(reason) = reason {
            log::warn!(
                "tweet {}: dropping span [{}, {}) {:?}: {:?}",
                nt.original.id,
                span.start,
                span.end,
                span.surface,
                reason
            );
            warnings.push(ProjectionWarning {
                tweet_id: nt.original.id.clone(),
                span: span.clone(),
                reason,
            });
            continue;
        }
        let first = (span.start..span.end)
            .find(|&i| map.fate[i] == CharFate::Kept)
            .expect("checked above");
        let last = (span.start..span.end)
            .rev()
            .find(|&i| map.fate[i] == CharFate::Kept)
            .expect("checked above");
        let start = map.map(first);
        let end = map.map(last) + 1;
        let mut projected =
            Span::from_text(&nt.normalized_text, start, end).expect("kept chars map in bounds");
        projected.score = span.score;
        out.push(projected);
    }
    (out, warnings)
}

/// Maps spans on the normalized text back to the original text. A span
/// touching a placeholder widens to the whole replaced URL or mention.
pub fn unproject_spans(spans: &[Span], nt: &NormalizedTweet) -> Vec<Span> {
    spans
        .iter()
        .map(|span| {
            let (start, end) = nt.offset_map.to_original(span.start, span.end);
            let mut s = Span::from_text(&nt.original.text, start, end)
                .expect("origin ranges lie inside the original text");
            s.score = span.score;
            s
        })
        .collect()
}

/// Normalizes an annotated tweet: the text is replaced by its normalized
/// form and the spans are projected into it.
pub fn normalize_annotated(tweet: &AnnotatedTweet) -> (AnnotatedTweet, NormalizedTweet, Vec<ProjectionWarning>) {
    let nt = normalize(&tweet.tweet);
    let (spans, warnings) = project_spans(&tweet.spans, &nt);
    let out = AnnotatedTweet {
        tweet: Tweet::new(
            tweet.tweet.id.clone(),
            tweet.tweet.user_id.clone(),
            nt.normalized_text.clone(),
        ),
        spans,
        binary_only: tweet.binary_only,
    };
    (out, nt, warnings)
}

impl NormalizedTweet {
    pub fn token_text(&self, token: &Token) -> &str {
        char_slice(&self.normalized_text, token.start, token.end).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surfaces(text: &str) -> Vec<String> {
        tokenize(text).into_iter().map(|t| t.surface).collect()
    }

    fn tweet(text: &str) -> Tweet {
        Tweet::new("t", "u", text)
    }

    #[test]
    fn tokenize_basic() {
        assert_eq!(surfaces("I took Tylenol!"), ["I", "took", "Tylenol", "!"]);
        assert_eq!(surfaces("check https://t.co/x"), ["check", "https://t.co/x"]);
        assert_eq!(surfaces(":) ok"), [":)", "ok"]);
    }

    #[test]
    fn emoticon_table_is_reasonable() {
        assert!(EMOTICONS.len() >= 45);
        for e in EMOTICONS {
            assert_eq!(surfaces(e), [*e], "{e}");
        }
    }

    #[test]
    fn token_kinds() {
        let toks = tokenize("@amy #headache www.x.org :D 2.5 ...");
        let kinds: Vec<_> = toks.iter().map(|t| t.kind).collect();
        assert_eq!(
            kinds,
            [
                TokenKind::Mention,
                TokenKind::Hashtag,
                TokenKind::Url,
                TokenKind::Emoticon,
                TokenKind::Number,
                TokenKind::Ellipsis
            ]
        );
    }

    #[test]
    fn offsets_are_chars() {
        let toks = tokenize("😀 took advil");
        assert_eq!((toks[0].start, toks[0].end), (0, 1));
        assert_eq!((toks[2].start, toks[2].end), (7, 12));
    }

    #[test]
    fn replaces_urls_and_mentions() {
        let nt = normalize(&tweet("@john see https://t.co/abc"));
        assert_eq!(nt.normalized_text, "@USER see URL");
        let s: Vec<_> = nt.tokens.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(s, ["@USER", "see", "URL"]);
    }

    #[test]
    fn splits_hashtags() {
        let nt = normalize(&tweet("#headache sucks"));
        assert_eq!(nt.normalized_text, "#headache sucks");
        let s: Vec<_> = nt.tokens.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(s, ["#", "headache", "sucks"]);
        assert_eq!((nt.tokens[1].start, nt.tokens[1].end), (1, 9));
    }

    #[test]
    fn plain_text_is_fixpoint() {
        let nt = normalize(&tweet("plain text"));
        assert_eq!(nt.normalized_text, "plain text");
        assert!(nt.offset_map.is_identity());
        let spans = vec![Span::from_text("plain text", 6, 10).unwrap()];
        let (projected, warnings) = project_spans(&spans, &nt);
        assert_eq!(projected, spans);
        assert!(warnings.is_empty());
    }

    #[test]
    fn span_after_removed_emoji_shifts_left() {
        let text = "😀🤰 took advil";
        let nt = normalize(&tweet(text));
        assert_eq!(nt.normalized_text, " took advil");
        let spans = vec![Span::from_text(text, 8, 13).unwrap()];
        let (projected, _) = project_spans(&spans, &nt);
        assert_eq!((projected[0].start, projected[0].end), (6, 11));
        assert_eq!(projected[0].surface, "advil");
    }

    #[test]
    fn span_in_url_is_dropped() {
        // "tylenol" sits inside the URL.
        let text = "see https://x.com/tylenol now";
        let nt = normalize(&tweet(text));
        assert_eq!(nt.normalized_text, "see URL now");
        let spans = vec![Span::from_text(text, 18, 25).unwrap()];
        assert_eq!(spans[0].surface, "tylenol");
        let (projected, warnings) = project_spans(&spans, &nt);
        assert!(projected.is_empty());
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].reason, DropReason::OverlapsReplacement);
    }

    #[test]
    fn erased_span_is_dropped() {
        let text = "took 💊💊 ok";
        let nt = normalize(&tweet(text));
        let spans = vec![Span::from_text(text, 5, 7).unwrap()];
        let (projected, warnings) = project_spans(&spans, &nt);
        assert!(projected.is_empty());
        assert_eq!(warnings[0].reason, DropReason::Erased);
    }

    #[test]
    fn unproject_round_trip() {
        let text = "@amy 😀 took advil https://t.co/x";
        let nt = normalize(&tweet(text));
        assert_eq!(nt.normalized_text, "@USER  took advil URL");
        let gold = vec![Span::from_text(text, 12, 17).unwrap()];
        let (projected, _) = project_spans(&gold, &nt);
        assert_eq!(unproject_spans(&projected, &nt), gold);
        // A span on the placeholder widens to the whole URL.
        let url = Span::from_text(&nt.normalized_text, 18, 21).unwrap();
        let back = unproject_spans(&[url], &nt);
        assert_eq!(back[0].surface, "https://t.co/x");
    }

    proptest! {
        #[test]
        fn token_surfaces_slice_text(text in "[a-c@#:/)( .😀wh-]{0,24}|\\PC{0,16}") {
            let tokens = tokenize(&text);
            let mut prev_end = 0;
            for t in &tokens {
                prop_assert!(t.start < t.end);
                prop_assert!(t.start >= prev_end);
                prop_assert_eq!(char_slice(&text, t.start, t.end), Some(t.surface.as_str()));
                prop_assert!(!t.surface.chars().any(char::is_whitespace));
                prev_end = t.end;
            }
            let covered: usize = tokens.iter().map(|t| t.end - t.start).sum();
            prop_assert_eq!(covered, text.chars().filter(|c| !c.is_whitespace()).count());
        }

        #[test]
        fn normalize_invariants(text in "(https://t\\.co/[a-z]{1,3}|www\\.x|@[a-z_]{1,4}|#[a-z]{1,4}|[a-c]{1,3}|[ .:)(😀💊@#/]){0,10}") {
            let nt = normalize(&tweet(&text));
            let again = normalize(&tweet(&nt.normalized_text));
            prop_assert_eq!(&again.normalized_text, &nt.normalized_text);
            for w in nt.offset_map.to_normalized.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for t in &nt.tokens {
                prop_assert_eq!(nt.token_text(t), t.surface.as_str());
                prop_assert!(!t.surface.chars().any(char::is_whitespace));
            }
            for w in nt.tokens.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
        }
    }
}
