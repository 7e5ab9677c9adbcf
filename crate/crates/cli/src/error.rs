use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or unreadable input.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] grato::Error),
    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Engine(grato::Error::Numeric(_)) => EXIT_NUMERIC,
            CliError::Engine(grato::Error::Io(_)) | CliError::Output { .. } => EXIT_IO,
            CliError::Engine(_) => EXIT_CONFIG,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
