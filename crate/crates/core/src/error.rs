use thiserror::Error;

/// Errors raised by the engine.
///
/// `Validation` covers malformed inputs (bad coordinates, inconsistent
/// dimensions, out-of-range counts); `Numerical` covers failures of the
/// numerical machinery itself (factorization breakdowns, degenerate
/// optimizer states).
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),
    #[error("numerical: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
