//! Command layer for the blockswarm pipeline; the binary in `main.rs` is a
//! thin argument-parsing shell over these functions.

pub mod commands;
pub mod config;

pub use commands::*;
pub use config::RunConfig;

use thiserror::Error;

/// Command failures, each mapped to a process exit code: usage/config
/// errors exit 1, data errors exit 2, training divergence exits 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}
