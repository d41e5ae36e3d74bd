use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("batch norm `{0}` used in inference mode before any training update")]
    UninitializedMoments(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config digest mismatch: checkpoint was written for a different model configuration")]
    DigestMismatch,

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
