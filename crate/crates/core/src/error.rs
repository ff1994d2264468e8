use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("covariance matrix is not positive definite at the evaluated state")]
    PositiveDefinitenessViolation,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("curve endpoints coincide")]
    DegenerateEndpoints,

    #[error("curve needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("tangent vector vanishes")]
    ZeroTangent,

    #[error("curve evolution step failed: {0}")]
    StepFailure(String),

    #[error("Jacobian is singular")]
    SingularJacobian,

    #[error("Newton iteration did not converge after {iterations} iterations (|b| = {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no saddle point found: {0}")]
    SaddleNotFound(String),

    #[error("endpoints lie in the same basin of attraction")]
    SameBasin,

    #[error("continuation stalled at parameter {0}")]
    ContinuationStalled(f64),

    #[error("fold not certified: {0}")]
    NotAFold(String),

    #[error("non-positive tunneling current J_{index} = {value:.6e}")]
    NonPositiveCurrent { index: usize, value: f64 },

    #[error("fit domain error: {0}")]
    FitDomainError(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
