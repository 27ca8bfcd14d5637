use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A structural precondition (grid compatibility, exponents, bounds) is violated.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A sample path leaves the value grid.
    #[error("path leaves the value grid at time index {index} (value {value})")]
    OutOfBounds { index: usize, value: f64 },
    /// Neither the circulant embedding nor the Cholesky fallback produced a valid factorization.
    #[error("fBm generation failed: {0}")]
    Generation(String),
    /// A singular potential was evaluated at its singularity.
    #[error("potential is singular at {0:?}; mollify before evaluating")]
    Singular(Vec<f64>),
    /// The time stepper hit a non-finite value, a degenerate linear system or blew up.
    #[error("numerical failure: {0}")]
    Numeric(String),
    /// `a^2 <= K + C a` admits no real solution.
    #[error("infeasible quadratic bound: K = {k} < -C^2/4 with C = {c}")]
    Infeasible { k: f64, c: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
