use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum DlgError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error in {what} at byte {offset}: {msg}")]
    Parse {
        what: String,
        offset: usize,
        msg: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-deterministic forward: {0}")]
    NonDeterministic(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DlgError>;

impl DlgError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DlgError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DlgError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DlgError::Io {
            path: path.into(),
            source,
        }
    }
}
