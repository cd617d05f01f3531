use thiserror::Error;

use crate::engine::GenerationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("entry {index} is zero; distributions must be strictly positive")]
    ZeroEntry { index: usize },
    #[error("entry {index} is not a finite non-negative number ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("distribution needs at least 2 entries, got {0}")]
    LengthTooSmall(usize),
    #[error("entries sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("context weights differ between models")]
    ContextWeightMismatch,
    #[error("invalid context weights: {0}")]
    InvalidContextWeights(String),
    #[error("mixing weight {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("operator needs at least one {0}")]
    EmptyInputs(&'static str),
    #[error("anchor weight {0} outside (0, 1]")]
    AlphaOutOfRange(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("decay rate {0} outside (0, 1]")]
    InvalidRate(f64),
    #[error("recency window must be at least 1, got {0}")]
    InvalidWindow(usize),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("invalid noise parameter: {0}")]
    InvalidNoiseParam(String),
    #[error("trace has {0} generations, need at least 3")]
    TraceTooShort(usize),
    #[error("baseline divergence {0} is too small to normalise against")]
    DegenerateBaseline(f64),
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error("need at least 2 teachers, got {0}")]
    TooFewTeachers(usize),
    #[error("no traces to plot")]
    NoTraces,
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {reason}")]
    Validation { path: String, reason: String },
    #[error("anchor weight is 0 but the scenario is not flagged \"unanchored\": true")]
    UnanchoredWithoutFlag,
    #[error("generation {generation}: {source}")]
    Generation {
        generation: usize,
        #[source]
        source: Box<Error>,
        /// Everything computed before the failing step.
        partial: Box<GenerationTrace>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, reason: impl ToString) -> Self {
        Error::Validation {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// True for errors caused by bad input rather than by a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::UnanchoredWithoutFlag
        )
    }
}
