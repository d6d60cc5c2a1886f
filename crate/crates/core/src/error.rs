//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched shapes, dimensions or counts between related inputs.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input violates a precondition (empty set, out-of-range value, NaN, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Binary file could not be decoded; `offset` is the byte position that failed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// Recognised container but unsupported encoding (e.g. compressed WAV).
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
