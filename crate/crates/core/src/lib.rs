//! Stochastic compositional optimization for KL-regularized distributionally
//! robust learning: the COVER and RECOVER optimizers, the compositional DRO
//! objective, comparison baselines and deterministic oracles.

pub mod baselines;
pub mod dro;
pub mod error;
pub mod linalg;
pub mod models;
pub mod optimizers;
pub mod oracle;
pub mod problem;
pub mod record;
pub mod regularizer;

pub use dro::{make_kl_dro, DroSpec, KlDroProblem, SimplexWeights};
pub use error::{Error, Result};
pub use linalg::{InnerJacobian, InnerValue, ParamVector};
pub use problem::{CompositionalProblem, ErmProblem, ProblemConstants, SeededRng};
pub use record::{LogSettings, Recorder, RunRecord, RunRow};
pub use regularizer::Regularizer;
