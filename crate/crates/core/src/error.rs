use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::numeric::NumericError;
use crate::smiles::SmilesError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    IoBare(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),
    /// Invalid configuration or arguments.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Corrupt, truncated or incompatible container file.
    #[error("bad file format: {0}")]
    Format(String),
    /// Training or inference produced non-finite values.
    #[error("numeric failure: {0}")]
    NumericFailure(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numeric(
                NumericError::NonFinite { .. }
                | NumericError::NonFiniteGradient(_)
                | NumericError::NonFinitePerturbation(_),
            )
            | Error::NumericFailure(_) => 3,
            _ => 2,
        }
    }
}
