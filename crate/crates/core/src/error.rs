//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the toolkit.
///
/// Rejected-input conditions (shape mismatches, invariant violations) are
/// reported eagerly at the public API boundary; numeric saturation inside an
/// operation is *not* an error — it is clamped and counted instead.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensors that must share a spatial shape do not.
    #[error("shape mismatch: {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// An input violates a documented precondition or type invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration file or parameter file could not be parsed.
    #[error("config error: {0}")]
    Config(String),

    /// A dataset directory does not follow the expected layout.
    #[error("dataset layout error at {path}: {reason}")]
    DatasetLayout { path: PathBuf, reason: String },

    /// An image file could not be decoded or encoded.
    #[error("image codec error for {path}: {source}")]
    ImageCodec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// A checkpoint file is missing, corrupt or of an incompatible format.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss; the run was aborted.
    #[error(
        "non-finite loss at epoch {epoch}, step {step}; last good checkpoint: {last_checkpoint}"
    )]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        last_checkpoint: String,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
