//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed inconsistent shapes, empty inputs or out-of-contract values.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A value is outside the physically meaningful range (e.g. echo delay past the chirp).
    #[error("out of range: {0}")]
    OutOfRange(String),
    /// An input is degenerate for the requested operation (e.g. all-zero signal).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    /// Internal state violates an invariant (e.g. non-finite parameters, missing grads).
    #[error("invalid state: {0}")]
    InvalidState(String),
    /// A numerical abort: non-finite loss or similar.
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    /// Missing or corrupt on-disk artifact (dataset, checkpoint).
    #[error("missing or corrupt artifact: {0}")]
    Artifact(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
