use std::fmt;

use logsum_amp::Error;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or parameter values. Exit code 2.
    Usage(String),
    /// No bracket, divergence where convergence was required, domain errors.
    /// Exit code 3.
    Numerical(String),
    /// Exit code 1.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Shape { .. } | Error::Capacity { .. } | Error::Format(_) => {
                CliError::Usage(e.to_string())
            }
            Error::Domain(_) | Error::Regime { .. } | Error::NoBracket(_) => CliError::Numerical(e.to_string()),
            Error::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
