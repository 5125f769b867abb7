//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model loading, drafting, verification, and generation.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation received inputs that violate its preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An argument is out of its legal range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A tree or generation configuration is unusable.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An object is in a state that does not admit the requested operation.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A model file violates a format invariant (e.g. a row not summing to 1).
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// A model file declares a format version this build does not support.
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
