use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("no candidate node: {0}")]
    NoCandidate(String),

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },

    #[error("corrupt payload: {0}")]
    Corrupt(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than by misuse of the API.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_) | Error::Internal(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
