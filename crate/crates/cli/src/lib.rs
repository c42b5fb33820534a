//! Command implementations behind the `osrkit` binary.
//!
//! Everything here is deterministic in (configuration, seed): result files
//! are byte-identical across reruns, and `run --jobs N` produces the same
//! bytes as a sequential run because rows are committed in cell order.

pub mod config;
pub mod divide;
pub mod report;
pub mod run;

use std::fmt;

/// Failures split by exit code: validation errors exit 1, runtime
/// failures exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "invalid configuration: {}", msg),
            CliError::Runtime(msg) => write!(f, "{}", msg),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}
