use thiserror::Error;

/// Errors raised by argument validation across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("noise draw {draw} outside (-{level}, {level})")]
    DrawOutOfRange { draw: f64, level: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("category {category} out of range 1..={max}")]
    CategoryOutOfRange { category: usize, max: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("estimator diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
