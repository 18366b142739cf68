use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value {value} at cell {cell}")]
    NonFinite { cell: usize, value: f64 },
    #[error("norm exponent p = {0} must be at least 1")]
    InvalidExponent(f64),
}

/// A violated structural assumption on the motility or the data.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypothesisError {
    #[error("motility must be positive, got phi({at}) = {value}")]
    NonPositiveMotility { at: f64, value: f64 },
    #[error("motility {name}: {reason}")]
    BadParameters { name: String, reason: String },
    #[error("unknown motility '{0}'")]
    UnknownMotility(String),
    #[error("exponent alpha = {alpha} must exceed m/2 = {half_m}")]
    AlphaTooSmall { alpha: f64, half_m: f64 },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("u undershoot {min_u:e} below tolerance -{tol:e}")]
    Undershoot { min_u: f64, tol: f64 },
    #[error("conjugate gradients stalled after {iterations} iterations, relative residual {residual:e}")]
    SolverFailure { iterations: usize, residual: f64 },
    #[error("time step {dt:e} fell below the minimum {dt_min:e} at t = {t}")]
    NonConvergence { t: f64, dt: f64, dt_min: f64 },
    #[error("invalid step request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Hypothesis(#[from] HypothesisError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("{0}")]
    Invalid(String),
    #[error("member run failed: {0}")]
    Run(#[from] StepError),
    #[error(transparent)]
    Hypothesis(#[from] HypothesisError),
    #[error(transparent)]
    Field(#[from] FieldError),
}
