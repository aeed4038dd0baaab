//! CLI error type carrying the process exit code:
//! 2 validation, 3 numerical, 4 I/O.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<esag::Error> for CliError {
    fn from(e: esag::Error) -> Self {
        match e {
            esag::Error::Validation(_) | esag::Error::Dimension(_) => {
                CliError::Validation(e.to_string())
            }
            esag::Error::Numerical(_)
            | esag::Error::DegenerateLocation(_)
            | esag::Error::TruncationDegenerate(_)
            | esag::Error::RejectionExhausted(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
