use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not positive definite: smallest eigenvalue {min_eigenvalue:.6e}")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("CVaR level must lie strictly in (0, 1), got {0}")]
    InvalidLevel(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("malformed conic problem: {0}")]
    MalformedProblem(String),

    #[error(
        "conic solver failed with status {status:?} \
         (primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e})"
    )]
    SolverFailure {
        status: crate::conic::ConicStatus,
        primal_residual: f64,
        dual_residual: f64,
    },

    #[error("safety constraint infeasible: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("simulation aborted at step {step}: {reason}")]
    SimulationAbort { step: usize, reason: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
