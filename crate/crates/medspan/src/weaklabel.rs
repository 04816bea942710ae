//! Recovering mention offsets from tweet-level drug names.
//!
//! Binary-labeled data lists the normalized drug names for each positive
//! tweet but not where they occur. Exact matching looks for the name itself
//! on token boundaries; partial matching accepts a short window of tokens
//! in which enough of the name's tokens appear up to a small edit distance.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{char_len, AnnotatedTweet, Dataset, Span, Tweet};
use crate::error::{Error, Result};
use crate::preprocess::{tokenize, Token};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    #[default]
    Partial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchPolicy {
    pub mode: MatchMode,
    /// Extra text tokens a window may hold beyond the name's token count.
    pub max_token_gap: usize,
    pub min_token_overlap_fraction: f64,
    pub edit_distance_per_token: usize,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            mode: MatchMode::Partial,
            max_token_gap: 0,
            min_token_overlap_fraction: 0.5,
            edit_distance_per_token: 1,
        }
    }
}

impl MatchPolicy {
    pub fn validate(&self) -> Result<()> {
        let f = self.min_token_overlap_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!(
                "min_token_overlap_fraction must be in (0, 1], got {f}"
            )));
        }
        Ok(())
    }
}

/// Case folding used by all matchers: a char's lowercase form when that is a
/// single char, the char itself otherwise. Keeps offsets stable.
pub fn fold(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

fn fold_str(s: &str) -> String {
    s.chars().map(fold).collect()
}

/// Case-insensitive occurrences of `name` whose both ends fall on token
/// boundaries, chosen greedily left to right.
pub fn match_exact(text: &str, name: &str) -> Vec<Span> {
    let name: Vec<char> = name.chars().map(fold).collect();
    if name.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = text.chars().map(fold).collect();
    let tokens = tokenize(text);
    let ends: std::collections::HashSet<usize> = tokens.iter().map(|t| t.end).collect();
    let mut spans = Vec::new();
    let mut next_free = 0;
    for token in &tokens {
        let start = token.start;
        let end = start + name.len();
        if start < next_free || end > chars.len() || !ends.contains(&end) {
            continue;
        }
        if chars[start..end] == name[..] {
            spans.push(Span::from_text(text, start, end).expect("in bounds"));
            next_free = end;
        }
    }
    spans
}

fn is_content(token: &Token) -> bool {
    token.surface.chars().any(char::is_alphanumeric)
}

#[derive(Debug)]
struct Candidate {
    count: usize,
    distance: usize,
    start: usize,
    end: usize,
}

/// Exact matches plus token-window matches. See [`MatchPolicy`] for the
/// window rule; exact hits always win, remaining windows are chosen greedily
/// by (matched name tokens desc, total edit distance asc, start asc,
/// length asc) without overlap.
pub fn match_partial(text: &str, name: &str, policy: &MatchPolicy) -> Vec<Span> {
    let mut selected = match_exact(text, name);

    let name_tokens: Vec<String> = tokenize(name)
        .iter()
        .filter(|t| is_content(t))
        .map(|t| fold_str(&t.surface))
        .collect();
    if name_tokens.is_empty() {
        return selected;
    }
    let text_tokens = tokenize(text);
    let folded: Vec<Option<String>> = text_tokens
        .iter()
        .map(|t| is_content(t).then(|| fold_str(&t.surface)))
        .collect();

    // distance[i][j]: edit distance between text token i and name token j,
    // None when text token i is not a content token.
    let tol = policy.edit_distance_per_token;
    let distance: Vec<Option<Vec<usize>>> = folded
        .iter()
        .map(|t| {
            t.as_ref().map(|t| {
                name_tokens
                    .iter()
                    .map(|n| strsim::levenshtein(t, n))
                    .collect()
            })
        })
        .collect();
    let matches_any = |i: usize| {
        distance[i]
            .as_ref()
            .is_some_and(|d| d.iter().any(|&x| x <= tol))
    };

    let m = name_tokens.len();
    let required = ((policy.min_token_overlap_fraction * m as f64) - 1e-9).ceil().max(1.0) as usize;
    let max_window = m + policy.max_token_gap;

    let mut candidates = Vec::new();
    for i in 0..text_tokens.len() {
        if !matches_any(i) {
            continue;
        }
        for w in 1..=max_window.min(text_tokens.len() - i) {
            let window = i..i + w;
            let mut count = 0;
            let mut total = 0;
            for j in 0..m {
                let best = window
                    .clone()
                    .filter_map(|k| distance[k].as_ref().map(|d| d[j]))
                    .min();
                if let Some(d) = best.filter(|&d| d <= tol) {
                    count += 1;
                    total += d;
                }
            }
            if count < required {
                continue;
            }
            let last = window.clone().rev().find(|&k| matches_any(k)).expect("i matches");
            candidates.push(Candidate {
                count,
                distance: total,
                start: text_tokens[i].start,
                end: text_tokens[last].end,
            });
        }
    }
    candidates.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then(a.distance.cmp(&b.distance))
            .then(a.start.cmp(&b.start))
            .then((a.end - a.start).cmp(&(b.end - b.start)))
    });
    for c in candidates {
        if selected.iter().any(|s| c.start < s.end && s.start < c.end) {
            continue;
        }
        selected.push(Span::from_text(text, c.start, c.end).expect("token offsets in bounds"));
    }
    selected.sort_by_key(|s| s.start);
    selected
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Exact,
    Partial,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recovered {
    pub tweet: AnnotatedTweet,
    /// True when every name produced at least one span.
    pub matched: bool,
    /// How the weakest name was found; `None` when nothing matched.
    pub kind: Option<MatchKind>,
    pub unmatched_names: Vec<String>,
}

/// Locates every name in the tweet: exact first, partial only when exact
/// fails. Overlapping results keep the longer span.
pub fn recover_spans(tweet: &Tweet, names: &[String], policy: &MatchPolicy) -> Recovered {
    let mut found: Vec<Span> = Vec::new();
    let mut unmatched_names = Vec::new();
    let mut used_partial = false;
    for name in names.iter().map(|n| n.trim()).filter(|n| !n.is_empty()) {
        let mut spans = match_exact(&tweet.text, name);
        if spans.is_empty() && policy.mode == MatchMode::Partial {
            spans = match_partial(&tweet.text, name, policy);
            used_partial |= !spans.is_empty();
        }
        if spans.is_empty() {
            unmatched_names.push(name.to_string());
        }
        found.extend(spans);
    }

    found.sort_by(|a, b| b.len().cmp(&a.len()).then(a.start.cmp(&b.start)));
    let mut merged: Vec<Span> = Vec::new();
    for s in found {
        if !merged.iter().any(|m| m.overlaps(&s)) {
            merged.push(s);
        }
    }
    merged.sort_by_key(|s| s.start);

    let matched = unmatched_names.is_empty() && !merged.is_empty();
    let kind = match (merged.is_empty(), used_partial) {
        (true, _) => None,
        (false, true) => Some(MatchKind::Partial),
        (false, false) => Some(MatchKind::Exact),
    };
    Recovered {
        tweet: AnnotatedTweet::new(tweet.clone(), merged),
        matched,
        kind,
        unmatched_names,
    }
}

/// One row of binary-labeled data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryLabeledTweet {
    pub tweet: Tweet,
    pub label: bool,
    pub names: Vec<String>,
}

/// Reads `tweet_id<TAB>user_id<TAB>text<TAB>label<TAB>names` rows, names
/// `;`-separated. A leading `tweet_id` header row is skipped.
pub fn load_binary_tsv(path: impl AsRef<Path>) -> Result<Vec<BinaryLabeledTweet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let schema = |line: usize, message: String| Error::Schema {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| schema(line, e.to_string()))?;
        if line == 1 && rec.get(0) == Some("tweet_id") {
            continue;
        }
        if rec.len() != 4 && rec.len() != 5 {
            return Err(schema(line, format!("expected 5 tab-separated fields, got {}", rec.len())));
        }
        let label = match &rec[3] {
            "0" => false,
            "1" => true,
            other => return Err(schema(line, format!("label must be 0 or 1, got {other:?}"))),
        };
        let names: Vec<String> = rec
            .get(4)
            .unwrap_or_default()
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if rec[0].is_empty() || rec[2].is_empty() {
            return Err(schema(line, "tweet_id and text must be non-empty".into()));
        }
        rows.push(BinaryLabeledTweet {
            tweet: Tweet::new(&rec[0], &rec[1], &rec[2]),
            label,
            names,
        });
    }
    Ok(rows)
}

/// Writes rows in the format read by [`load_binary_tsv`], with a header.
/// Tabs and newlines inside fields are replaced by spaces.
pub fn save_binary_tsv(rows: &[BinaryLabeledTweet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
    let mut out = String::from("tweet_id\tuser_id\ttext\tlabel\tnames\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            clean(&r.tweet.id),
            clean(&r.tweet.user_id),
            clean(&r.tweet.text),
            u8::from(r.label),
            clean(&r.names.join(";"))
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmatchedTweet {
    pub tweet_id: String,
    pub names: Vec<String>,
}

/// Counts over positive tweets; `n_negative` is reported separately.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakLabelReport {
    pub n_input: usize,
    pub n_matched_exact: usize,
    pub n_matched_partial: usize,
    pub n_unmatched: usize,
    pub n_negative: usize,
    pub unmatched: Vec<UnmatchedTweet>,
}

/// Turns binary-labeled rows into a span-labeled dataset. Negatives are kept
/// with no spans. Unmatched positives are dropped, or kept as binary-only
/// examples when `keep_unmatched` is set.
pub fn weak_label(
    name: &str,
    rows: &[BinaryLabeledTweet],
    policy: &MatchPolicy,
    keep_unmatched: bool,
) -> Result<(Dataset, WeakLabelReport)> {
    policy.validate()?;
    let mut report = WeakLabelReport::default();
    let mut tweets = Vec::with_capacity(rows.len());
    for row in rows {
        if !row.label {
            report.n_negative += 1;
            tweets.push(AnnotatedTweet::negative(row.tweet.clone()));
            continue;
        }
        report.n_input += 1;
        let rec = recover_spans(&row.tweet, &row.names, policy);
        if rec.matched {
            match rec.kind {
                Some(MatchKind::Partial) => report.n_matched_partial += 1,
                _ => report.n_matched_exact += 1,
            }
            tweets.push(rec.tweet);
        } else {
            report.n_unmatched += 1;
            report.unmatched.push(UnmatchedTweet {
                tweet_id: row.tweet.id.clone(),
                names: rec.unmatched_names.clone(),
            });
            if keep_unmatched {
                tweets.push(AnnotatedTweet {
                    tweet: row.tweet.clone(),
                    spans: Vec::new(),
                    binary_only: true,
                });
            }
        }
    }
    debug_assert!(tweets.iter().all(|t| t.spans.iter().all(|s| s.end <= char_len(t.text()))));
    Ok((Dataset::new(name, tweets)?, report))
}
