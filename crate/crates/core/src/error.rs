use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {source}")]
    Decode {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("serialization failed: {0}")]
    Encode(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{what} `{id}` belongs to task `{actual}`, expected `{expected}`")]
    CrossTask {
        what: &'static str,
        id: String,
        expected: String,
        actual: String,
    },

    #[error("template error: {0}")]
    Template(String),

    #[error("malformed tie ranking {ranks:?}: {reason}")]
    TieStructure { ranks: Vec<u32>, reason: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("zero-norm embedding")]
    ZeroNorm,

    #[error("best_of_n selection requires scores")]
    MissingScores,

    #[error("unknown {what} `{id}`")]
    Unknown { what: &'static str, id: String },

    #[error("no usable records: {0}")]
    NoRecords(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
