use std::process::ExitCode;

use thiserror::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        })
    }

    pub fn data(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }

    /// Any failure while reading or validating an experiment file.
    pub fn config(e: irdan::Error) -> Self {
        match e {
            irdan::Error::Config(msg) => CliError::Config(msg),
            e => CliError::Config(e.to_string()),
        }
    }

    pub fn runtime(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{context}: {e}"))
    }
}

/// Classifies a library error raised outside file loading.
impl From<irdan::Error> for CliError {
    fn from(e: irdan::Error) -> Self {
        match e {
            irdan::Error::Config(msg) => CliError::Config(msg),
            irdan::Error::Format(_) | irdan::Error::Version { .. } | irdan::Error::Empty(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
