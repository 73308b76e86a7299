//! Command-line driver for damage-process identification experiments.
//!
//! Subcommands: `forward`, `synthesize`, `invert` and
//! `diagnose {derivative|adjoint|cone|contraction|spectrum|semiconvergence}`.
//! Exit status is 0 on success, 1 for invalid input and 2 for numerical failures.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod output;

pub use commands::{run_cli, run_cli_with};
pub use config::{parse_config, ConfigError, ExperimentConfig};
