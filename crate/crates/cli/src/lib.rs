//! Library behind the `sdfm` binary: argument parsing, file formats and the
//! subcommand drivers.

pub mod commands;
pub mod io;
pub mod manifest;
pub mod model;

use sdfm::DfmError;
use thiserror::Error;

pub use commands::{execute, Cli, Outcome};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Data(_) | Self::Io(_) => EXIT_DATA,
        }
    }
}

impl From<DfmError> for CliError {
    fn from(e: DfmError) -> Self {
        match e {
            DfmError::InvalidConfig(_) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;
