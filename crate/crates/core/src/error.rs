use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{0}: backward called without a saved forward context")]
    MissingContext(&'static str),

    #[error("invalid architecture name `{name}`: {reason}")]
    ConfigName { name: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ring {ring} of polygon {polygon} is degenerate (fewer than 3 distinct vertices)")]
    DegenerateRing { polygon: usize, ring: usize },

    #[error("stitch: pixel ({x}, {y}) is not covered by any tile")]
    CoverageGap { x: usize, y: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
