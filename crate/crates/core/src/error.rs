use thiserror::Error;

/// Errors raised by the numerical toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid problem setup (mesh, grid, mollifier radius, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument left the set on which the operator is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Factorization breakdown or a failed inner solve.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Picard iteration did not reach its tolerance.
    #[error("fixed-point iteration did not converge after {sweeps} sweeps (last update {last:.3e})")]
    Convergence { sweeps: usize, last: f64, history: Vec<f64> },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, Error>;
