//! Config-driven experiment runner: parses TOML experiment files, runs every
//! cell over its seeds, writes one CSV per run plus a manifest, and
//! summarizes finished runs.

pub mod checks;
pub mod config;
pub mod error;
pub mod instance;
pub mod runner;
pub mod summary;

pub use config::{AlgorithmConfig, Cell, ExperimentConfig};
pub use error::{BenchError, Result};
pub use instance::Instance;
pub use runner::{run_experiment, run_single, RunOptions, RunOutcome, RunStatus};
pub use summary::{summarize, Summary};
