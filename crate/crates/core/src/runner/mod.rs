//! Experiment orchestration: configuration, manifests, staged training
//! recipes and the pipeline commands behind the `nxkt` binary.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod recipe;

pub use commands::{Layout, Outcome};
pub use config::{ExperimentConfig, LoadedConfig, DATA_ROOT_ENV};
pub use manifest::Manifest;
