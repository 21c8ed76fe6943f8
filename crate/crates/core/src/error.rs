use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("factor {id} ({name}) returned non-finite log term {value} inside the support")]
    NonFiniteFactor { id: usize, name: String, value: f64 },

    #[error("invalid factor ordering: {0}")]
    FactorOrder(String),

    #[error("covariance is not symmetric positive-definite")]
    NotPositiveDefinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing context for branch policy {0}")]
    MissingContext(&'static str),

    #[error("inconsistent evaluation cache: {0}")]
    InconsistentCache(String),

    #[error("transition matrix row {row} sums to {sum}")]
    RowSum { row: usize, sum: f64 },

    #[error("series too short: need at least {needed}, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("worker failed: {0}")]
    Worker(String),

    #[error("initial state is outside the support of the target")]
    InitialOutsideSupport,

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
