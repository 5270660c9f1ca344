//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape mismatch or invalid dimensions for an operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A numeric value violated a documented precondition (range, finiteness).
    #[error("value error: {0}")]
    Value(String),

    /// Non-finite values detected while the finite-check flag is enabled,
    /// or a non-finite training loss.
    #[error("non-finite values in {0}")]
    NonFinite(String),

    /// Malformed label file content; `line` is 1-based.
    #[error("label parse error at line {line}: {msg}")]
    LabelParse { line: usize, msg: String },

    /// Dataset layout or content problems.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Checkpoint container violations (magic, offsets, missing entries).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Image decode/encode failures.
    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn value(msg: impl Into<String>) -> Self {
        Error::Value(msg.into())
    }
}
