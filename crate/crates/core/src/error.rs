use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("basis with germ dimension {dim} and total degree {degree} is too large")]
    BasisTooLarge { dim: usize, degree: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("point {x} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("basis index {index} out of range 1..={max}")]
    BasisIndex { index: usize, max: usize },

    #[error("non-finite value in {what} at x = {x}")]
    NonFinite { what: &'static str, x: f64 },

    #[error("control variate multipliers have not been estimated for this coefficient layout")]
    MissingPilot,

    #[error("empty batch")]
    EmptyBatch,

    #[error("batch members have inconsistent shapes")]
    InconsistentBatch,

    #[error("problem has no exact solution")]
    MissingExactSolution,

    #[error("problem is not linear (reaction term present)")]
    NotLinear,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("not enough samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
