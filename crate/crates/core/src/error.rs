use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field mismatch: {0}")]
    FieldMismatch(String),

    #[error("invalid problem data: {0}")]
    InvalidProblem(String),

    #[error("node {0} is a boundary node")]
    BoundaryNode(usize),

    #[error("domain error at node {node}: {reason}")]
    Domain { node: usize, reason: String },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("singular linearization (smallest eigenvalue estimate {indicator:e})")]
    SingularJacobian { indicator: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("monotone iteration lost monotonicity at iteration {iteration} by {violation:e}; increase the shift K")]
    MonotonicityViolation { iteration: usize, violation: f64 },

    #[error("eigen iteration stopped after {iterations} iterations at λ ≈ {lambda:e}")]
    EigenNoConvergence { iterations: usize, lambda: f64 },

    #[error("weight has an empty positivity pattern")]
    EmptyWeight,

    #[error("{0}")]
    Continuation(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
