//! Tweets, spans, datasets and the on-disk formats that carry them.
//!
//! All offsets are Unicode scalar value offsets (`char` indices), half-open.
//! Tweets routinely contain emoji, and byte offsets would not survive a trip
//! through tools written in other languages.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of `char`s in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Slice `s` by char offsets. Returns `None` when the range is out of bounds.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let lo = indices.nth(start)?;
    let hi = if end == start {
        lo
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&s[lo..hi])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub user_id: String,
    pub text: String,
}

impl Tweet {
    pub fn new(id: impl Into<String>, user_id: impl Into<String>, text: impl Into<String>) -> Self {
        Tweet {
            id: id.into(),
            user_id: user_id.into(),
            text: text.into(),
        }
    }
}

/// A medication mention, `[start, end)` in char offsets of its tweet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Span {
    /// Builds a span over `text[start..end]`, or `None` if the range is not
    /// a non-empty in-bounds range.
    pub fn from_text(text: &str, start: usize, end: usize) -> Option<Span> {
        if start >= end {
            return None;
        }
        let surface = char_slice(text, start, end)?;
        Some(Span {
            start,
            end,
            surface: surface.to_string(),
            score: None,
        })
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn key(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Checks a single span against the text it claims to slice.
pub fn validate_span(tweet_id: &str, text: &str, span: &Span) -> Result<()> {
    let fail = |message: String| Error::InvalidSpan {
        tweet_id: tweet_id.to_string(),
        message,
    };
    if span.start >= span.end {
        return Err(fail(format!("empty or reversed range [{}, {})", span.start, span.end)));
    }
    let n = char_len(text);
    if span.end > n {
        return Err(fail(format!(
            "range [{}, {}) exceeds text length {}",
            span.start, span.end, n
        )));
    }
    let slice = char_slice(text, span.start, span.end).unwrap_or_default();
    if slice != span.surface {
        return Err(fail(format!(
            "surface {:?} does not match text slice {:?} at [{}, {})",
            span.surface, slice, span.start, span.end
        )));
    }
    if let Some(score) = span.score {
        if !(0.0..=1.0).contains(&score) {
            return Err(fail(format!("score {score} outside [0, 1]")));
        }
    }
    Ok(())
}

/// Checks a span list: each span valid, sorted by start, non-overlapping.
pub fn validate_spans(tweet_id: &str, text: &str, spans: &[Span]) -> Result<()> {
    for span in spans {
        validate_span(tweet_id, text, span)?;
    }
    for pair in spans.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(Error::InvalidSpan {
                tweet_id: tweet_id.to_string(),
                message: format!(
                    "spans [{}, {}) and [{}, {}) overlap or are out of order",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                ),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedTweet {
    pub tweet: Tweet,
    pub spans: Vec<Span>,
    /// Positive tweet whose mentions could not be located. Such tweets
    /// supervise the tweet-level classifier only.
    pub binary_only: bool,
}

impl AnnotatedTweet {
    pub fn new(tweet: Tweet, spans: Vec<Span>) -> Self {
        AnnotatedTweet {
            tweet,
            spans,
            binary_only: false,
        }
    }

    pub fn negative(tweet: Tweet) -> Self {
        AnnotatedTweet::new(tweet, Vec::new())
    }

    pub fn id(&self) -> &str {
        &self.tweet.id
    }

    pub fn text(&self) -> &str {
        &self.tweet.text
    }

    /// Tweet-level label: mentions a medication or not.
    pub fn is_positive(&self) -> bool {
        self.binary_only || !self.spans.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tweet.id.is_empty() {
            return Err(Error::InvalidSpan {
                tweet_id: String::new(),
                message: "tweet id is empty".into(),
            });
        }
        if self.tweet.text.is_empty() {
            return Err(Error::InvalidSpan {
                tweet_id: self.tweet.id.clone(),
                message: "tweet text is empty".into(),
            });
        }
        validate_spans(&self.tweet.id, &self.tweet.text, &self.spans)
    }
}

/// One line of a dataset JSONL file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TweetRecord {
    id: String,
    user_id: String,
    text: String,
    spans: Vec<Span>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    binary_only: bool,
}

impl From<&AnnotatedTweet> for TweetRecord {
    fn from(t: &AnnotatedTweet) -> Self {
        TweetRecord {
            id: t.tweet.id.clone(),
            user_id: t.tweet.user_id.clone(),
            text: t.tweet.text.clone(),
            spans: t.spans.clone(),
            binary_only: t.binary_only,
        }
    }
}

impl From<TweetRecord> for AnnotatedTweet {
    fn from(r: TweetRecord) -> Self {
        AnnotatedTweet {
            tweet: Tweet::new(r.id, r.user_id, r.text),
            spans: r.spans,
            binary_only: r.binary_only,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub tweets: Vec<AnnotatedTweet>,
}

impl Dataset {
    /// Validates every tweet and id uniqueness.
    pub fn new(name: impl Into<String>, tweets: Vec<AnnotatedTweet>) -> Result<Self> {
        let dataset = Dataset {
            name: name.into(),
            tweets,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.tweets.len());
        for t in &self.tweets {
            t.validate()?;
            if !seen.insert(t.id()) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate tweet id {} in {}",
                    t.id(),
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AnnotatedTweet> {
        self.tweets.iter().find(|t| t.id() == id)
    }

    /// Concatenates datasets in order, naming the result `a+b+c`.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut names = Vec::new();
        let mut tweets = Vec::new();
        for part in parts {
            names.push(part.name.clone());
            tweets.extend(part.tweets.iter().cloned());
        }
        Dataset::new(names.join("+"), tweets)
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads a dataset from JSONL. Blank lines are ignored; the dataset is named
/// after the file stem.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tweets = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TweetRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let tweet = AnnotatedTweet::from(record);
        tweet.validate()?;
        tweets.push(tweet);
    }
    Dataset::new(dataset_name(path), tweets)
}

pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for t in &dataset.tweets {
        let line = serde_json::to_string(&TweetRecord::from(t)).expect("records always serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_tweets: usize,
    pub n_positive: usize,
    pub n_spans: usize,
    pub positive_rate: f64,
}

impl CorpusStats {
    pub fn from_counts(n_tweets: usize, n_positive: usize, n_spans: usize) -> Self {
        let positive_rate = if n_tweets == 0 {
            0.0
        } else {
            n_positive as f64 / n_tweets as f64
        };
        CorpusStats {
            n_tweets,
            n_positive,
            n_spans,
            positive_rate,
        }
    }
}

pub fn stats(dataset: &Dataset) -> CorpusStats {
    let n_positive = dataset.tweets.iter().filter(|t| !t.spans.is_empty()).count();
    let n_spans = dataset.tweets.iter().map(|t| t.spans.len()).sum();
    CorpusStats::from_counts(dataset.len(), n_positive, n_spans)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrugLexiconEntry {
    pub name: String,
    pub use_category: String,
}

/// Reads a `name<TAB>use_category` lexicon. The header row is mandatory.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Vec<DrugLexiconEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_lexicon(file, path)
}

pub(crate) fn read_lexicon(reader: impl std::io::Read, path: &Path) -> Result<Vec<DrugLexiconEntry>> {
    let schema = |line: usize, message: String| Error::Schema {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| schema(1, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "name" || &headers[1] != "use_category" {
        return Err(schema(1, format!("expected header `name<TAB>use_category`, got {headers:?}")));
    }
    let mut entries = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| schema(line, e.to_string()))?;
        let name = row.get(0).unwrap_or_default().trim();
        let category = row.get(1).unwrap_or_default().trim();
        if name.is_empty() || category.is_empty() {
            return Err(schema(line, "name and use_category must be non-empty".into()));
        }
        entries.push(DrugLexiconEntry {
            name: name.to_string(),
            use_category: category.to_string(),
        });
    }
    Ok(entries)
}

pub fn save_lexicon(entries: &[DrugLexiconEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("name\tuse_category\n");
    for e in entries {
        out.push_str(&e.name);
        out.push('\t');
        out.push_str(&e.use_category);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
