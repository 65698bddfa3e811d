//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input or configuration detected before any work started.
    #[error("validation: {0}")]
    Validation(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    /// A malformed record in a data file, with its 1-based line number.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A persisted artifact carries an unknown magic/version tag.
    #[error("unsupported format: expected {expected:?}, found {found:?}")]
    VersionMismatch { expected: String, found: String },

    /// A persisted artifact is structurally damaged (truncated, bad lengths).
    #[error("corrupt file: {0}")]
    Corrupt(String),

    /// A stored dimension disagrees with the runtime configuration.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// An optimizer step saw a NaN or infinite gradient and was aborted.
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
