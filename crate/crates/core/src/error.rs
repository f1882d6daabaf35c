use thiserror::Error;

/// Errors produced across the solver, certifier and generators.
#[derive(Debug, Error)]
pub enum SdpError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("problem appears primal infeasible: {0}")]
    Infeasible(String),

    #[error("problem appears unbounded: {0}")]
    Unbounded(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("certificate construction failed: {0}")]
    CertificateFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SdpError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SdpError::DimensionMismatch { expected, got })
    }
}
