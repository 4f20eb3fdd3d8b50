use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate rotation: {0}")]
    DegenerateRotation(String),

    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("prompt is empty after trimming whitespace")]
    EmptyPrompt,

    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("bad argument: {0}")]
    BadArgument(String),

    #[error("non-finite loss in term `{0}`")]
    NonFiniteLoss(String),

    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("malformed LLM response: {0}")]
    MalformedResponse(String),

    #[error("model not trained: {0}")]
    NotTrained(String),

    #[error("single-person motion source unavailable: {0}")]
    SourceUnavailable(String),

    #[error("no recorded fixture for prompt (first line: {0:?})")]
    FixtureMissing(String),

    #[error("LLM transport error: {0}")]
    Transport(String),

    #[error("corrupt file {path}: {detail}")]
    CorruptFile { path: PathBuf, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::CorruptFile {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
