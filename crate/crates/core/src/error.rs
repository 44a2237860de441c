use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value at {what}")]
    NonFinite { what: String },
    #[error("degree {degree} exceeds the ceiling {ceiling}")]
    Sizing { degree: usize, ceiling: usize },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("record violates the norm bounds ({0}); clip or rescale it to the unit ball and |y| <= 1 first")]
    NormViolation(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
