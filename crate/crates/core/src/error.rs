use thiserror::Error;

/// Errors raised by problems, optimizers and oracles.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("non-finite iterate at step {t} (eta = {eta:e}, |d| = {direction_norm:e})")]
    NonFiniteIterate {
        t: u64,
        eta: f64,
        direction_norm: f64,
    },

    #[error("diverged at step {t}: |w| = {norm:e}")]
    Diverged { t: u64, norm: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("stage {stage} needs {needed} samples in total but the budget is {budget}")]
    BudgetExceeded { stage: usize, needed: u64, budget: u64 },

    #[error("no progress for {iterations} iterations (best objective {best})")]
    Stalled { iterations: u64, best: f64 },

    #[error("degenerate estimate: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn ensure_finite(context: &str, values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!(
            "{context}: entry {i} is {}",
            values[i]
        )));
    }
    Ok(())
}
