//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed cell in an input file; names the offending row and column.
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// Input data violates a structural contract (duplicate dates, schema
    /// mismatch, all-missing column, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Bad or incomplete run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse (stepping a finished episode, dimension mismatch, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values encountered during training.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Problem size exceeds what an exhaustive routine can enumerate.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// Leveraged portfolio value dropped to or below zero; the episode aborts.
    #[error("portfolio ruin at step {step}: {message}")]
    Ruin { step: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
