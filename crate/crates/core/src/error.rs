use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("operation requires the nonconvex regime (epsilon < sqrt(lambda)), got lambda={lambda}, epsilon={epsilon}")]
    Regime { lambda: f64, epsilon: f64 },

    #[error("shape mismatch: expected length {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("instance needs {requested} bytes, above the budget of {budget} bytes")]
    Capacity { requested: u64, budget: u64 },

    #[error("no bracketing interval found: {0}")]
    NoBracket(String),

    #[error("malformed instance file: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
