use thiserror::Error;

/// Mesh construction failures.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("interval ({a}, {b}) is empty or reversed")]
    BadInterval { a: f64, b: f64 },
    #[error("need at least one element per axis, got {0}")]
    NoElements(usize),
}

/// Failures of linear or nonlinear solves inside model evaluations.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("matrix factorization failed: {0}")]
    Factorization(String),
    #[error("Newton iteration stalled after {iters} steps (residual {residual:.3e})")]
    NewtonStalled { iters: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("optimizer made no progress: {0}")]
    NoProgress(String),
    #[error("operator is not positive definite: {0}")]
    Indefinite(String),
}

/// Failures while assembling or applying the discrepancy posterior.
#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("first training input must equal the low-fidelity optimum (difference norm {0:.3e})")]
    FirstInputNotCenter(f64),
    #[error("training input {index} is linearly dependent on the previous inputs")]
    DependentInput { index: usize },
    #[error("training data is empty")]
    Empty,
    #[error("training inputs and outputs have mismatched shapes: {0}")]
    Shape(String),
    #[error("direction-weighting matrix is numerically singular (eigenvalue {0:.3e})")]
    SingularWeighting(f64),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Configuration-level failures (bad hyper-parameters, inconsistent sizes).
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{0}")]
    Invalid(String),
}
