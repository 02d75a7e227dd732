use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("numeric failure in {block}: {detail}")]
    Numeric { block: String, detail: String },

    #[error("insufficient records: {0}")]
    Insufficient(String),

    #[error("failed to load record {record}: {detail}")]
    Record { record: String, detail: String },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("dataset checksum mismatch: expected {expected}, found {found}")]
    Checksum { expected: String, found: String },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numeric(block: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            block: block.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
