use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid record {id}: {reason}")]
    Validation { id: String, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("unknown {kind} '{name}'")]
    Lookup { kind: &'static str, name: String },

    #[error("index {index} out of range for {len} classes")]
    Index { index: usize, len: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint does not match requested config: {0}")]
    ConfigMismatch(String),

    #[error("non-finite value at {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(id: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            id: id.into(),
            reason: reason.into(),
        }
    }

    /// Process exit status for the command-line front end: 1 for
    /// validation and configuration problems, 2 for I/O and corrupt input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Corruption(_) | Error::Format(_) | Error::Json(_) => 2,
            _ => 1,
        }
    }
}
