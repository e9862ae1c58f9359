use rand::SeedableRng;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{axpy, norm, ParamVector};
use crate::models::{uniform_index, Dataset, LossModel};
use crate::optimizers::DIVERGENCE_NORM;
use crate::problem::SeededRng;
use crate::record::Recorder;
use crate::regularizer::Regularizer;

/// Mini-batch SGD on the average loss with step decay at epoch milestones.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub eta0: f64,
    /// Epochs after which the step is divided by `decay`; sorted ascending.
    pub milestones: Vec<f64>,
    pub decay: f64,
    pub epochs: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 >= 0.0) || !self.eta0.is_finite() {
            return Err(Error::Configuration(format!("eta0 must be nonnegative, got {}", self.eta0)));
        }
        if self.milestones.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Configuration("milestones must be sorted".into()));
        }
        if !(self.decay > 0.0) || !(self.epochs > 0.0) || self.batch_size == 0 {
            return Err(Error::Configuration("decay, epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// `prox^eta_r(w - eta * mean grad l(w; z_B))` for `epochs` passes. Rows are
/// tagged with `1 + milestones passed` as their stage.
pub fn sgd_erm_run(
    model: &dyn LossModel,
    data: &Dataset,
    regularizer: &Regularizer,
    w0: ParamVector,
    config: &SgdConfig,
    recorder: &mut Recorder<'_>,
) -> Result<ParamVector> {
    config.validate()?;
    ensure_dim("SGD iterate", model.param_dim(), w0.dim())?;
    if data.is_empty() {
        return Err(Error::Configuration("cannot sample from an empty dataset".into()));
    }
    let n = data.len();
    let b = config.batch_size;
    let iters_per_epoch = n as f64 / b as f64;
    let total = (config.epochs * iters_per_epoch).ceil() as u64;
    let mut rng = SeededRng::seed_from_u64(config.seed);
    let mut w = w0;
    let mut grad = vec![0.0; w.dim()];
    let mut buf = vec![0.0; w.dim()];
    let mut stage = 1;
    let mut eta = config.eta0;
    recorder.maybe_log(stage, 0, 0, &w, eta.max(f64::MIN_POSITIVE), 0)?;
    for it in 1..=total {
        let seen = (it - 1) * b as u64;
        if recorder.out_of_budget(seen) {
            break;
        }
        let epoch = (it - 1) as f64 / iters_per_epoch;
        let passed = config.milestones.iter().filter(|&&m| epoch >= m).count();
        eta = config.eta0 / config.decay.powi(passed as i32);
        stage = passed + 1;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..b {
            let z = &data.points[uniform_index(&mut rng, n)];
            model.loss_grad_into(&w, z, &mut buf);
            axpy(1.0 / b as f64, &buf, &mut grad);
        }
        if eta > 0.0 {
            w = regularizer.prox(eta, &w.step(eta, &grad)?);
        }
        let wn = norm(&w);
        if !wn.is_finite() || wn > DIVERGENCE_NORM {
            return Err(Error::Diverged { t: it, norm: wn });
        }
        recorder.maybe_log(stage, it, it * b as u64, &w, eta.max(f64::MIN_POSITIVE), 0)?;
    }
    if recorder.is_enabled() {
        let last = recorder.record().last().map_or(0, |r| r.iteration);
        let it = total.max(last);
        recorder.log(stage, it, it * b as u64, &w, eta.max(f64::MIN_POSITIVE), 0)?;
    }
    Ok(w)
}
