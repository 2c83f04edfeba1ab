use num_complex::Complex64;
use thiserror::Error;

/// Errors raised by the numerical pipeline.
///
/// The variants map one-to-one onto the CLI exit codes: structural and
/// validation problems, numerical non-convergence, violations of a
/// statement that theory guarantees, and configuration mistakes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("accuracy target not met: {what} (achieved estimate {achieved:.3e})")]
    Accuracy { what: String, achieved: f64 },

    #[error("transfer matrix B+ singular at x = {x} for lambda = {lambda} (condition {cond:.3e})")]
    SingularTransfer { x: f64, lambda: Complex64, cond: f64 },

    #[error("theory violation: {0}")]
    TheoryViolation(String),

    #[error("configuration error: {0}")]
    Configuration(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Configuration(msg.into())
    }

    pub fn theory(msg: impl Into<String>) -> Self {
        Error::TheoryViolation(msg.into())
    }

    pub fn accuracy(what: impl Into<String>, achieved: f64) -> Self {
        Error::Accuracy {
            what: what.into(),
            achieved,
        }
    }
}
