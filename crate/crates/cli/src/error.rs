use std::process::ExitCode;

use graphcnnpred::Error;

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("backtest error: {0}")]
    Backtest(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
            CliError::Backtest(_) => 5,
            CliError::Io(_) => 1,
        })
    }

    pub fn data(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Config(m),
            Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }

    pub fn training(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Config(m),
            Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Training(other.to_string()),
        }
    }

    pub fn backtest(e: Error) -> Self {
        match e {
            Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Backtest(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
