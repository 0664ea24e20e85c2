use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the PSMT library.
#[derive(Debug, Error)]
pub enum PsmtError {
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<PsmtError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PsmtError>;

pub(crate) fn invalid(msg: impl Into<String>) -> PsmtError {
    PsmtError::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> PsmtError {
    PsmtError::ShapeMismatch(msg.into())
}
