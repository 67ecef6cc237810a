//! Library side of the `pchaos` command-line tool: settings resolution,
//! experiment suites and report writers.

pub mod output;
pub mod settings;
pub mod suites;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Library(#[from] poisson_chaos::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Usage and configuration problems exit with 2; so do runtime failures,
    /// since no verdict was reached.
    pub fn exit_code(&self) -> u8 {
        2
    }
}
