//! Error type shared across the crate.

use thiserror::Error;

/// Unified error for tensor ops, data handling, model construction, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    /// Always carries both shapes so callers can see what went wrong.
    #[error("shape mismatch in {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Invalid configuration detected before any compute ran.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (clips, masks, labels).
    #[error("data error: {0}")]
    Data(String),

    /// A serialized artifact (dataset or checkpoint) failed to parse.
    #[error("format error: {0}")]
    Format(String),

    /// A computation produced NaN or Inf where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    // Wrapped by hand (not #[from]/#[source]) so the cause appears once in
    // Display instead of again through the source chain.
    #[error("io error: {0}")]
    Io(std::io::Error),

    #[error("json error: {0}")]
    Json(serde_json::Error),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::ShapeMismatch`].
    pub fn shape(context: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            context,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
