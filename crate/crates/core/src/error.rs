use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid truth assignment: {0}")]
    InvalidTruth(String),

    #[error("invalid procedure: {0}")]
    InvalidProcedure(String),

    #[error("invalid error budget: {0}")]
    InvalidBudget(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("operation requires a simple-hypothesis stream, found composite stream {0}")]
    CompositeStream(usize),

    #[error("operation requires composite streams, found simple stream {0}")]
    SimpleStream(usize),

    #[error("fixed-sample decision queried at time {at}, procedure needs exactly {needed} steps")]
    PrematureQuery { at: u64, needed: u64 },

    #[error("condition Phi(h)/d = Phi(h) - h has no root on the interval for d = {0}")]
    NoRoot(f64),

    #[error("{0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("horizon-cap abort rate {rate:.4} exceeds tolerance {tolerance}")]
    AbortRate { rate: f64, tolerance: f64 },

    #[error("unknown figure id `{0}`")]
    UnknownFigure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
