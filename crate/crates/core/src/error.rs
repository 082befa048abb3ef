use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("series too short: {0}")]
    TooShort(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("bad sample count {0}: CRPS needs an even number of samples, at least 2")]
    BadSampleCount(usize),

    #[error("training diverged at epoch {epoch}: non-finite {what}")]
    Diverged { epoch: usize, what: String },

    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
