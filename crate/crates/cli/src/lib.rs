//! Experiment runner for sparsified Stein inference on neural potentials.

pub mod config;
pub mod experiment;
pub mod pipeline;
pub mod plot;

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentConfig, Method, Problem};
pub use pipeline::{run_pipeline, RunManifest, StageError};
