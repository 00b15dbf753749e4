//! Command implementations behind the `teledge` binary.

pub mod commands;
pub mod serve;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, files or parameters.
    #[error("{0}")]
    Config(String),
    /// Failure while running a valid configuration.
    #[error("{0}")]
    Engine(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Engine(_) => 1,
        }
    }
}
