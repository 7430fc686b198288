//! Experiment driver: dataset generation, cross-validated classification
//! runs, multi-look evaluation and result curves.

pub mod benchmark;
pub mod commands;
pub mod config;
pub mod curves;
pub mod error;
pub mod experiment;
pub mod multilook;

pub use config::{ExperimentConfig, MethodSpec, Scenario};
pub use curves::{emit_curves, CurvePoint, CurveSelection};
pub use error::{CliError, Result};
pub use experiment::{run_experiment, select_lambda, LambdaChoice, ResultRow};
pub use multilook::run_multilook;
