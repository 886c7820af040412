//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    #[error("dimension error: {0}")]
    Dim(String),

    /// An operation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API was driven outside its contract (double backward, empty scope, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A network spec is internally inconsistent.
    #[error("spec error: {0}")]
    Spec(String),

    /// On-disk format violation (bad magic, truncation, shape mismatch).
    #[error("format error: {0}")]
    Format(String),

    /// Synthetic scene cannot be rendered as requested.
    #[error("generation error: {0}")]
    Generation(String),

    /// Training diverged or was misconfigured.
    #[error("training error: {0}")]
    Train(String),

    /// Point tracking failed (degenerate texture, divergence).
    #[error("tracking error: {0}")]
    Track(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
