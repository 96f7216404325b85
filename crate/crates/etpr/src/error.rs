use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum EtprError {
    #[error("matrix is not positive definite even after jitter {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("study failed: method {method} failed in {failures} of {reps} replications")]
    StudyFailed {
        method: String,
        failures: usize,
        reps: usize,
    },

    #[error("parse error at line {line}: {message}")]
    ParseError { line: u64, message: String },

    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),

    #[error("unknown curve id `{0}`")]
    UnknownCurveId(String),

    #[error("predictive variance {0:e} is negative beyond the clamp threshold")]
    NegativeVariance(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EtprError>;
