use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes of the model file reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatFault {
    NotAModelFile,
    UnsupportedVersion(u8),
    Truncated,
    ChecksumMismatch,
    BadHeader,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),

    #[error("{layer}: expected input shape {expected:?}, got {actual:?}")]
    LayerShape {
        layer: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("dataset error at {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("model file: {detail} ({fault:?})")]
    ModelFormat { fault: FormatFault, detail: String },

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(fault: FormatFault, detail: impl Into<String>) -> Self {
        Error::ModelFormat {
            fault,
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerical divergence rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. }
        )
    }
}
