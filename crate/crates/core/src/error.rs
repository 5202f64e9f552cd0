use thiserror::Error;

/// Errors produced anywhere in the pricing pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PideError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("failed to bracket root: {0}")]
    Bracket(String),

    #[error("integration did not reach tolerance (estimate {estimate:e}, error {error:e})")]
    Integration { estimate: f64, error: f64 },

    #[error("zero pivot in incomplete factorization at row {row}")]
    ZeroPivot { row: usize },

    #[error("BiCGSTAB breakdown after {iterations} iterations (residual {residual:e})")]
    Breakdown { iterations: usize, residual: f64 },

    #[error("BiCGSTAB stagnated after {iterations} iterations (residual {residual:e})")]
    Stagnation { iterations: usize, residual: f64 },

    #[error("BiCGSTAB reached {iterations} iterations without converging (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last update {update:e})")]
    FixedPoint { iterations: usize, update: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for PideError {
    fn from(e: std::io::Error) -> Self {
        PideError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PideError>;
