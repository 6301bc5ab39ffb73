use thiserror::Error;

/// Errors raised by the laboratory routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("operator is not elliptic: {0}")]
    NotElliptic(String),
    #[error("operator does not have a finite-dimensional null-space: {0}")]
    NotFdn(String),
    #[error("field is not in the range of the operator: {0}")]
    NotInRange(String),
    #[error("domain error: {0}")]
    Domain(String),
}

impl Error {
    /// True for refusals caused by a mathematical precondition of the operator
    /// (as opposed to malformed user input).
    pub fn is_precondition(&self) -> bool {
        matches!(self, Error::NotElliptic(_) | Error::NotFdn(_))
    }

    /// True for malformed or out-of-range user input.
    pub fn is_input(&self) -> bool {
        matches!(self, Error::Dimension(_) | Error::Input(_) | Error::Resolution(_) | Error::Domain(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
