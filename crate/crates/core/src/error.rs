use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the matting engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The computation graph is malformed.
    #[error("structural error: {0}")]
    Structural(String),

    /// Input data failed validation (trimap encoding, image sizes, value ranges).
    #[error("validation error: {0}")]
    Validation(String),

    /// A NaN or infinity showed up where finite values are required.
    #[error("non-finite value at flat index {index}: {context}")]
    NonFinite { index: usize, context: String },

    /// A sample could not be produced from the current draw (e.g. no unknown pixels).
    #[error("degenerate sample: {0}")]
    Degenerate(String),

    /// The requested operation is not available for this input.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Dataset directory does not have the expected layout.
    #[error("dataset ingestion failed: {0}")]
    Ingest(String),

    /// Checkpoint bytes are malformed or were written by an incompatible version.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// Configuration file or override is invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
