use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command line, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output { .. } => 2,
            CliError::Data(_) | CliError::Csv { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<ifam_core::Error> for CliError {
    fn from(e: ifam_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
