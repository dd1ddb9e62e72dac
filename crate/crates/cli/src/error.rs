use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, missing or malformed files, invalid configuration.
    #[error("{0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) | CliError::Data(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl From<sharessm::Error> for CliError {
    fn from(e: sharessm::Error) -> Self {
        use sharessm::Error as E;
        match e {
            E::Data(_) => CliError::Data(e.to_string()),
            E::Structural(_) | E::Parameter(_) | E::Precondition(_) => CliError::Usage(e.to_string()),
            E::Training(_) | E::Checkpoint(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
