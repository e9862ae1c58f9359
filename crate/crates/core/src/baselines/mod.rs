//! Comparison methods: SGD on the average loss, ASC-PG and Stoc-AGDA.

mod agda;
mod ascpg;
mod sgd;
mod variance;

pub use agda::{agda_memory_words, stoc_agda_run, AgdaConfig, AgdaOutput, DualState, DUAL_FLOOR};
pub use ascpg::{ascpg_init, ascpg_run, ascpg_step, AscPgConfig, AscPgState};
pub use sgd::{sgd_erm_run, SgdConfig};
pub use variance::variance_comparison;
