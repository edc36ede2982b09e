//! Configuration files, data formats and subcommands of the `railodo` tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod files;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input: exit code 2.
    #[error("{0}")]
    Input(String),
    /// Estimator or run failure: exit code 3.
    #[error("{0}")]
    Run(String),
    /// Evaluation failure: exit code 4.
    #[error("{0}")]
    Evaluation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Run(_) => 3,
            CliError::Evaluation(_) => 4,
        }
    }
}
