use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hyperparameter index {0} out of range (expected 0..7)")]
    InvalidHyperIndex(usize),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    #[error("invalid kernel spec: {0}")]
    InvalidKernelSpec(String),

    #[error("matrix is not positive definite (pivot {pivot} of {size})")]
    NotPositiveDefinite { pivot: usize, size: usize },

    #[error("Toeplitz recursion broke down at order {order} (prediction error {error:e})")]
    Breakdown { order: usize, error: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid shard: {0}")]
    InvalidShard(String),

    #[error("too few points: {points} points cannot be split across {workers} workers")]
    TooFewPoints { points: usize, workers: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no expert produced a usable prediction")]
    NoExperts,

    #[error("malformed CSV row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("timestamps are not strictly increasing at line {line}")]
    NonMonotoneTimestamps { line: usize },

    #[error("gap in hourly series after row {position}")]
    Gap { position: usize },

    #[error("MAPE undefined: every truth value is zero")]
    ZeroTruth,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
