use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the selection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("probe mismatch: {left:?} vs {right:?}")]
    ProbeMismatch { left: String, right: String },

    #[error("unknown id: {0}")]
    UnknownId(String),

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::NumericDomain(_) | Error::Estimation(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-readable tag printed after `error_code=`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Estimation(_) => "estimation",
            Error::Format { .. } => "format",
            Error::NumericDomain(_) => "numeric_domain",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::ProbeMismatch { .. } => "probe_mismatch",
            Error::UnknownId(_) => "unknown_id",
            Error::DuplicateId(_) => "duplicate_id",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
