//! Config-driven experiment runner: TOML configs, CSV metrics, model dumps
//! and one-parameter sweeps.

pub mod config;
pub mod dump;
pub mod experiment;
pub mod sweep;

pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, AlgoSummary};
pub use sweep::run_sweep;
