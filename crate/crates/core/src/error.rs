use thiserror::Error;

/// Errors raised by the estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },
    #[error("degenerate update for coefficient {index}")]
    DegenerateUpdate { index: usize },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("signal is not in the range of the dictionary (relative residual {residual:e})")]
    InfeasibleConstraint { residual: f64 },
    #[error("dictionary generation failed after {rounds} rejection rounds")]
    GenerationFailure { rounds: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
