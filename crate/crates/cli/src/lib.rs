//! The `pvar` command-line tool: data fetching, synthetic panels, and the
//! estimate / forecast / spillover pipeline, all driven by one config file.
//!
//! Every run lands in a run directory: the aligned data the run consumed,
//! per-equation posterior draws, result CSVs, and a manifest tying them to
//! the config, the data fingerprint and the seed that produced them.

use std::fmt;

pub mod bench;
pub mod cmds;
pub mod config;
pub mod fetch;
pub mod manifest;
pub mod store;

/// Failures split by exit code: 1 for anything wrong with the request
/// (config, paths, inputs), 2 for failures while computing or fetching.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Compute(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Compute(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Tags an error from the input-checking phase.
pub fn validation<E: fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

/// Tags an error from the work itself.
pub fn compute<E: fmt::Display>(e: E) -> CliError {
    CliError::Compute(e.to_string())
}

pub type CliResult<T> = Result<T, CliError>;
