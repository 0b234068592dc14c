use thiserror::Error;

use crate::bank::BankError;
use crate::episodes::SamplingError;
use crate::ncc::NccError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Ncc(#[from] NccError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("InvalidConfig: {0}")]
    Config(String),
    #[error("EmptyInput: cannot aggregate an empty list")]
    EmptyInput,
    #[error("MissingLambdaTrace: {0}")]
    MissingLambdaTrace(String),
    #[error("Io: {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("Format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
