//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or sequence dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric argument is outside its valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Power normalization is undefined for an all-zero code.
    #[error("degenerate code: {0}")]
    DegenerateCode(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset bytes do not match the pinned checksum or expected layout.
    #[error("data integrity error: {0}")]
    Integrity(String),

    /// Dataset is not present locally and cannot be fetched.
    #[error("fetch error: {0}")]
    Fetch(String),

    /// Checkpoint file is malformed or disagrees with its embedded config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// Reports passed to `compare` do not share a testing SNR grid.
    #[error("alignment error: {0}")]
    Alignment(String),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
