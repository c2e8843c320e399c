use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("zero matrix on support: every regime coefficient vanishes")]
    ZeroMatrixOnSupport,

    #[error("matrix has a nonzero diagonal (max |a_ii| = {0}); a diagonal-free matrix is required")]
    NonzeroDiagonal(f64),

    #[error("IPW undefined at zero retention (coordinate {0})")]
    ZeroRetention(usize),

    #[error("computational budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("psi_alpha bracket expansion failed: {0}")]
    BracketExpansion(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
