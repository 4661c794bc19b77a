//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model/training/data configuration (shape constraints,
    /// divisibility rules, bad hyperparameters). Maps to CLI exit code 1.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse (e.g. backward on a non-scalar, mismatched metric grids).
    #[error("usage error: {0}")]
    Usage(String),

    /// Bad input data (labels out of range, missing foreground, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed on-disk artifact (checkpoint, volume file, manifest).
    #[error("format error: {0}")]
    Format(String),

    /// Training aborted (non-finite loss and similar runtime failures).
    #[error("training error: {0}")]
    Training(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors a caller caused by handing in an invalid
    /// configuration or request, as opposed to runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Usage(_))
    }
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(format!($($arg)*)) };
}
macro_rules! format_err {
    ($($arg:tt)*) => { $crate::error::Error::Format(format!($($arg)*)) };
}

pub(crate) use {config_err, data_err, format_err, usage_err};
