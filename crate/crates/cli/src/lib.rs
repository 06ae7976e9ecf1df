//! Library side of the `ilpv` command-line tool: configuration, the four
//! pipeline commands and their file outputs.

pub mod commands;
pub mod config;
pub mod output;

use thiserror::Error;

pub use commands::{analyze, repro, simulate, synth, Overrides};
pub use config::{ExperimentConfig, PlantConfig, WeightParams};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Schema(String),

    #[error("missing input: {0}")]
    Missing(String),

    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] incremental_lpv::error::Error),
}

impl CliError {
    /// 2 for an infeasible semidefinite program, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(incremental_lpv::error::Error::Infeasible(_)) => 2,
            _ => 1,
        }
    }
}
