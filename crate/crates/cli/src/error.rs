use std::path::{Path, PathBuf};

use domexp_core::Error as CoreError;
use thiserror::Error;

/// Failures of a subcommand, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub mod exit {
    /// Usage errors keep clap's status.
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const IO: u8 = 4;
    pub const NUMERIC: u8 = 5;
    pub const INPUT: u8 = 6;
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Numeric(_) => exit::NUMERIC,
            CliError::Input(_) => exit::INPUT,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Parameter(_) => exit::CONFIG,
                CoreError::Io(_) => exit::IO,
                CoreError::Numeric(_) => exit::NUMERIC,
                CoreError::Shape(_)
                | CoreError::Input(_)
                | CoreError::Parse { .. }
                | CoreError::Json(_) => exit::INPUT,
            },
        }
    }
}

/// Attaches the offending path to an I/O error.
pub(crate) fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Core errors raised while reading a file, with I/O failures tagged by path.
pub(crate) fn core_at(path: &Path) -> impl FnOnce(CoreError) -> CliError + '_ {
    move |e| match e {
        CoreError::Io(source) => CliError::Io {
            path: path.to_owned(),
            source,
        },
        CoreError::Json(j) => CliError::Input(format!("{}: {j}", path.display())),
        other => CliError::Core(other),
    }
}
