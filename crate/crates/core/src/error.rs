use std::path::PathBuf;

use thiserror::Error;

/// Failure classes shared across the crate.
///
/// The CLI maps these onto process exit codes, so new variants should be
/// slotted into one of the existing classes (see [`Error::class`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("constant frame has undefined correlation")]
    ConstantFrame,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail} (batch A indices {batch_a:?}, batch B indices {batch_b:?})")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
        batch_a: Vec<usize>,
        batch_b: Vec<usize>,
    },

    #[error("metric precondition failed: {0}")]
    Metric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure category, stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Divergence,
    Metric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Divergence { .. } | Error::NonFinite(_) => ErrorClass::Divergence,
            Error::Metric(_) | Error::ConstantFrame => ErrorClass::Metric,
            Error::InvalidInput(_)
            | Error::ShapeMismatch { .. }
            | Error::DegenerateFrame(_)
            | Error::Format { .. }
            | Error::Io { .. } => ErrorClass::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
