//! Error types shared across the pipeline.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{id}` (lines {first} and {second})")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },

    #[error("character `{0}` is not covered by the vocabulary")]
    UnknownChar(char),

    #[error("vocabulary is invalid: {0}")]
    InvalidVocab(String),

    #[error("word `{0}` does not occur in any option")]
    WordNotInOptions(String),

    #[error("unknown document id `{0}`")]
    UnknownDoc(String),

    #[error("dense vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("not enough distinct distractors for `{title}`: needed {needed}, found {found}")]
    InsufficientDistractors {
        title: String,
        needed: usize,
        found: usize,
    },

    #[error("empty differential-diagnosis graph")]
    EmptyGraph,

    #[error("dataset too small: eval split has {eval} examples, need at least {min}")]
    DatasetTooSmall { eval: usize, min: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
}

/// A non-fatal problem tied to one line of an input file.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl LineError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}
