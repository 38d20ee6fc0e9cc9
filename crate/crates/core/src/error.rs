use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("variable index {index} out of range for dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A point is not in the strictly positive orthant.
    #[error("point outside the positive orthant: {0}")]
    Domain(String),

    /// The field produced a value outside the nonnegative orthant minus the origin.
    #[error("field value out of range at {point:?}: {value:?}")]
    Range { point: Vec<f64>, value: Vec<f64> },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("finite-difference stencil leaves the orthant at coordinate {coordinate}")]
    Stencil { coordinate: usize },

    #[error("vector is not in the plane of the frame (residual {residual:e})")]
    OutOfPlane { residual: f64 },

    #[error("near-singular line intersection (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("integration step underflow at t = {t} (step {step:e})")]
    StepUnderflow { t: f64, step: f64 },

    #[error("crossing event not reached: {termination} at t = {t} (progress rate {rate:e})")]
    EventNotReached {
        termination: String,
        t: f64,
        rate: f64,
    },

    #[error("trajectory left the orthant at t = {t}; field range anomaly")]
    LeftDomain { t: f64 },

    #[error("no demand root converged (best residual per start: {best:?})")]
    NoDemand { best: Vec<f64> },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("no admissible epsilon found after {tries} tries (sweep {sweep:?})")]
    NoEpsilon { tries: usize, sweep: Vec<(f64, f64)> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
