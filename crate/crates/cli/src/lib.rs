//! Library side of the `lde` command: configuration, checkpoints, the
//! pipeline stages and their file outputs.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod persist;
pub mod render;
pub mod report;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, Preset, Seeds};
pub use error::{CliError, Result};
