use std::path::PathBuf;

use thiserror::Error;

use crate::tsdb::PutError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("insufficient training data: need {needed} points, have {available}")]
    InsufficientTraining { needed: usize, available: usize },

    #[error("label and truth hours do not line up: {0}")]
    HourMismatch(String),

    #[error(transparent)]
    Put(#[from] PutError),

    #[error("{path}:{line}: {source}")]
    CorruptStore {
        path: PathBuf,
        line: usize,
        #[source]
        source: PutError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the environment rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
