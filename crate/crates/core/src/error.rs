use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema violation in record {index}, field `{field}`: {message}")]
    Schema {
        index: usize,
        field: String,
        message: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("group {group} has {count} < {min} samples")]
    GroupTooSmall { group: usize, count: usize, min: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (learning rate {learning_rate})")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        batch: usize,
        learning_rate: f64,
    },

    #[error("no scorable pair: all truths are equal")]
    NoScorablePair,

    #[error("no scorable user")]
    NoScorableUser,

    #[error("missing table entry: {0}")]
    MissingEntry(String),

    #[error("schema mismatch: checkpoint expects {expected}, data has {found}")]
    SchemaMismatch { expected: String, found: String },

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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
