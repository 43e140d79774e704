//! Scenario driver for the e-skin simulator: configuration, the simulated
//! robot, scripted and live duplex sessions, and the `eskin` verbs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod duplex;
pub mod live;
pub mod robot;
pub mod script;
pub mod weigh;

use eskin_core::classifier::ClassifierError;
use eskin_core::sensing::SensingError;
use eskin_core::weighing::WeighError;
use thiserror::Error;

pub use config::ScenarioConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Weigh(#[from] WeighError),
    #[error("transport: {0}")]
    Transport(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 1 for anything the caller got wrong, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) | Self::Script { .. } => 1,
            _ => 2,
        }
    }
}
