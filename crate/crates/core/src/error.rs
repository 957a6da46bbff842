use thiserror::Error;

#[derive(Debug, Error)]
pub enum MotionError {
    #[error(transparent)]
    Kernel(#[from] insole_nn::NnError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("non-finite value at sample {index}: {what}")]
    NonFinite { index: usize, what: String },
    #[error("channel count mismatch: expected {expected}, got {got}")]
    Channels { expected: usize, got: usize },
    #[error("skeleton: {0}")]
    Skeleton(String),
    #[error("dataset line {line}: {msg}")]
    Dataset { line: usize, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MotionError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> MotionError {
    MotionError::Invalid(msg.into())
}
