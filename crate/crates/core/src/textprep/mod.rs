//! Narrative cleansing, vocabulary fitting, fixed-length encoding and
//! word-count statistics.

mod stats;
mod vocab;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stats::{word_count_stats, CorpusStats};
pub use vocab::{fit_vocabulary, Vocabulary, OOV_ID, PAD_ID};

pub const DEFAULT_MAX_LEN: usize = 200;
pub const DEFAULT_MAX_VOCAB: usize = 20_000;

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextprepError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary size limit must be at least 1")]
    InvalidMaxSize,
    #[error("stopword line {line}: {reason}")]
    InvalidStopword { line: usize, reason: String },
    #[error("vocabulary line {line}: {reason}")]
    VocabularySyntax { line: usize, reason: String },
    #[error("unknown truncation side {0:?} (expected head or tail)")]
    UnknownTruncation(String),
}

/// Lowercase single-token stopwords.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopwordList {
    words: BTreeSet<String>,
}

impl Default for StopwordList {
    /// The bundled English list.
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS).expect("bundled stopword list is valid")
    }
}

impl StopwordList {
    pub fn empty() -> Self {
        StopwordList {
            words: BTreeSet::new(),
        }
    }

    /// One word per line; entries are lowercased, blank lines skipped.
    pub fn parse(text: &str) -> Result<Self, TextprepError> {
        let mut words = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let w = line.trim();
            if w.is_empty() {
                continue;
            }
            if w.contains(char::is_whitespace) {
                return Err(TextprepError::InvalidStopword {
                    line: n + 1,
                    reason: format!("{w:?} contains whitespace"),
                });
            }
            words.insert(w.to_lowercase());
        }
        Ok(StopwordList { words })
    }

    pub fn from_words<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Result<Self, TextprepError> {
        let text: Vec<String> = words.into_iter().map(|w| w.as_ref().to_string()).collect();
        Self::parse(&text.join("\n"))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// Newline-delimited, sorted.
    pub fn to_text(&self) -> String {
        self.words.iter().map(|w| format!("{w}\n")).collect()
    }
}

/// Lowercases, replaces every non-alphanumeric, non-whitespace character by
/// a space, splits on whitespace and drops stopwords.
pub fn cleanse_text(raw: &str, stopwords: &StopwordList) -> String {
    let spaced: String = raw
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    spaced
        .split_whitespace()
        .filter(|t| !stopwords.contains(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Which end of an over-long narrative is kept.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    /// Keep the first `max_len` tokens.
    #[default]
    Head,
    /// Keep the last `max_len` tokens.
    Tail,
}

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Truncation::Head => "head",
            Truncation::Tail => "tail",
        })
    }
}

impl FromStr for Truncation {
    type Err = TextprepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "head" => Ok(Truncation::Head),
            "tail" => Ok(Truncation::Tail),
            other => Err(TextprepError::UnknownTruncation(other.to_string())),
        }
    }
}

/// Fixed-length id sequence with trailing zero padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Tokens before padding, capped at the sequence length.
    pub true_length: usize,
}

impl TokenSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }
}

/// [`encode_sequence_with`] using head truncation.
pub fn encode_sequence(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    encode_sequence_with(text, vocab, max_len, Truncation::Head)
}

/// Maps whitespace tokens to ids (unknown → [`OOV_ID`]), then pads with
/// [`PAD_ID`] or truncates to exactly `max_len`.
pub fn encode_sequence_with(text: &str, vocab: &Vocabulary, max_len: usize, truncation: Truncation) -> TokenSequence {
    assert!(max_len >= 1, "max_len must be at least 1");
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let kept = match truncation {
        Truncation::Head => &tokens[..tokens.len().min(max_len)],
        Truncation::Tail => &tokens[tokens.len().saturating_sub(max_len)..],
    };
    let mut ids: Vec<usize> = kept.iter().map(|t| vocab.id(t).unwrap_or(OOV_ID)).collect();
    let true_length = ids.len();
    ids.resize(max_len, PAD_ID);
    TokenSequence { ids, true_length }
}

/// Everything needed to turn a raw narrative into model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub stopwords: StopwordList,
    pub vocabulary: Vocabulary,
    pub max_len: usize,
    pub truncation: Truncation,
}

impl Preprocessor {
    pub fn cleanse(&self, raw: &str) -> String {
        cleanse_text(raw, &self.stopwords)
    }

    pub fn encode(&self, raw: &str) -> TokenSequence {
        encode_sequence_with(&self.cleanse(raw), &self.vocabulary, self.max_len, self.truncation)
    }
}
