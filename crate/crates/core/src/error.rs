use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("curvature condition failed: yᵀs = {ys:e} is not above the tolerance {threshold:e}")]
    CurvatureFailure { ys: f64, threshold: f64 },

    #[error("degenerate step: zero step or zero gradient difference")]
    DegenerateStep,

    #[error("invalid tuple: alpha = {alpha:e}, beta = {beta:e} (both must be positive)")]
    InvalidTuple { alpha: f64, beta: f64 },

    #[error("non-positive scaling factor {0}")]
    InvalidGamma(f64),

    #[error("dimension {dim} exceeds the dense cap {cap}")]
    DimensionTooLarge { dim: usize, cap: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: feature index {index} is not a positive 1-based index")]
    Index { line: usize, index: i64 },

    #[error("worker {worker} has insufficient communication history at t = {t}")]
    InsufficientHistory { worker: usize, t: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("need at least {needed} completed epochs, got {got}")]
    InsufficientEpochs { needed: usize, got: usize },

    #[error("incompatible traces: {0}")]
    IncompatibleTraces(String),

    #[error("singular aggregate Hessian estimate")]
    Singular,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 for configuration problems, 3 for data
    /// problems, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::DimensionTooLarge { .. } | Error::InvalidGamma(_) => 2,
            Error::Parse { .. }
            | Error::Index { .. }
            | Error::DimensionMismatch { .. }
            | Error::IncompatibleTraces(_)
            | Error::Io(_)
            | Error::Json(_) => 3,
            Error::CurvatureFailure { .. }
            | Error::DegenerateStep
            | Error::InvalidTuple { .. }
            | Error::InsufficientHistory { .. }
            | Error::NotPositiveDefinite
            | Error::InsufficientEpochs { .. }
            | Error::Singular
            | Error::NonFinite(_) => 4,
        }
    }
}
