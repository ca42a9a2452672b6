use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Ingestion {
        path: PathBuf,
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("consistency is undefined for a zero-norm model")]
    UndefinedConsistency,

    #[error("epsilon estimation failed: {0}")]
    Estimation(String),

    #[error("distribution map failed: {0}")]
    Map(String),

    #[error("fit failed: {0}")]
    Fit(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
