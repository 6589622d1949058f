use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("ingest error for {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    #[error("dynamic range undefined: image has no pixel with positive luminance")]
    UndefinedRange,

    #[error("empty map")]
    EmptyMap,

    #[error("internal error: {0}")]
    Internal(String),

    #[error("non-finite loss for image `{image}` at epoch {epoch}")]
    NonFiniteLoss { image: String, epoch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("image too small: {width}x{height}, need at least {min} pixels per side")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn ingest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension { op, left, right }
    }
}
