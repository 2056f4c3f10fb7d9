use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied data that violates a documented precondition.
    #[error("input error: {0}")]
    Input(String),

    /// Invalid combination of configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A component produced or received a value of the wrong shape.
    #[error("contract violation: {0}")]
    Contract(String),

    /// On-disk data is malformed, truncated or corrupted.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A required external resource (encoder binary, model) is not usable.
    #[error("environment error: {0}")]
    Environment(String),

    /// Training diverged.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
