use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable short code used in machine-readable CLI error lines and FFI status codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NotFound(_) => "not_found",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::ContractViolation(_) => "contract_violation",
            Error::Usage(_) => "usage",
            Error::NonFinite(_) => "non_finite",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::InvalidArgument(format!($($arg)*)) };
}
pub(crate) use invalid;
