use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("mask is empty: {0}")]
    EmptyMask(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("non-finite value during training: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure stems from bad input (as opposed to a runtime
    /// abort such as a diverging loss or an I/O failure).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFinite(_))
    }
}
