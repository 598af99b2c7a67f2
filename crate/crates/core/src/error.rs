use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus contains no tokens")]
    EmptyCorpus,

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("non-finite value at line {line} of {path}")]
    NonFinite { path: PathBuf, line: usize },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("dictionary format error at line(s) {lines:?}")]
    DictionaryFormat { lines: Vec<usize> },

    #[error("cannot normalize a zero-norm vector ({0})")]
    ZeroNorm(&'static str),

    #[error("sentence has no tokens to pool")]
    EmptySentence,

    #[error("word `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),

    #[error("no dictionary pair could be resolved in both vocabularies")]
    NoResolvablePairs,

    #[error("datasets share {count} clip id(s) (first: `{example}`); training data must be unpaired")]
    PairedData { count: usize, example: String },

    #[error("no aligned pair has co-occurrence mass in both corpora")]
    NoComparablePairs,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }
}
