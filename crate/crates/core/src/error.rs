use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GoasError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GoasError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("manifest schema error at line {line}{}: {message}", record.as_ref().map(|r| format!(" (record `{r}`)")).unwrap_or_default())]
    Schema {
        line: usize,
        record: Option<String>,
        message: String,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: u64, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GoasError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GoasError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        GoasError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GoasError::InvalidArgument(msg.into())
    }
}
