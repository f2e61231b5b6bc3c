use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const CAPACITY: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    /// A store row failed validation. `row` counts data rows from 1,
    /// not including the header.
    #[error("{}: row {row}, column {column}: {message}", path.display())]
    Row {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Analysis(#[from] mktsens_core::Error),

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => exit::USAGE,
            CliError::Row { .. } | CliError::Data(_) => exit::DATA,
            CliError::Analysis(mktsens_core::Error::Capacity { .. }) => exit::CAPACITY,
            CliError::Analysis(_) => exit::DATA,
            CliError::Write { .. } => exit::FAILURE,
        }
    }
}
