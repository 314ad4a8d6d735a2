use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Every score in the batch is identical, so no score grid can be built.
    #[error("degenerate batch: all scores are identical")]
    DegenerateBatch,

    #[error("forward cache does not match the network (stale or from another network)")]
    StaleCache,

    #[error("class `{0}` has no members")]
    EmptyClass(&'static str),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("training aborted: {0}")]
    Aborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
