use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("csv parse error at data row {row}: {msg}")]
    CsvRow { row: usize, msg: String },

    #[error("non-finite value at data row {row}")]
    NonFinite { row: usize },

    #[error("timestamps not strictly increasing at data row {row}")]
    NonIncreasingDates { row: usize },

    #[error("series too short: length {len}, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },

    #[error("sample split (n={n}, tau={tau}) exceeds series length {len}")]
    SplitOutOfRange { n: usize, tau: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("score diverged to -inf at index {index}")]
    DivergentScore { index: usize },

    #[error("empty scoring range")]
    EmptyScoreRange,

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("estimate is on the parameter boundary ({0}); asymptotics invalid there")]
    BoundaryEstimate(String),

    #[error("jacobian singular or ill-conditioned (condition number {cond:.3e})")]
    SingularJacobian { cond: f64 },

    #[error("too many invalid Gaussian parameter draws: {invalid} rejections for {requested} draws")]
    TooManyInvalidDraws { invalid: usize, requested: usize },

    #[error("{failed} of {total} replications failed (limit {limit})")]
    TooManyReplicationFailures { failed: usize, total: usize, limit: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
