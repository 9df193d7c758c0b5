use std::path::PathBuf;

use thiserror::Error;

use crate::data::SplitRole;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("manifest schema violation: {0}")]
    Schema(String),

    #[error("required role absent: {0}")]
    MissingRole(SplitRole),

    #[error("shape mismatch in {field}: {detail}")]
    Shape { field: String, detail: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("class id {label} out of range for {classes} classes")]
    InvalidLabel { label: i64, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },

    #[error("exact transport refused for {n}x{m} problem (limit n*m <= {limit})")]
    TransportTooLarge { n: usize, m: usize, limit: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
