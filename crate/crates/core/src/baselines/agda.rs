use std::time::Instant;

use rand::{Rng, SeedableRng};

use crate::dro::{DroSpec, SimplexWeights};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{axpy, norm, ParamVector};
use crate::models::uniform_index;
use crate::optimizers::DIVERGENCE_NORM;
use crate::problem::SeededRng;
use crate::record::Recorder;

/// Weights below this are raised to it before renormalizing.
pub const DUAL_FLOOR: f64 = 1e-300;

/// Weight of the newest sample in the running baseline of the dual gradient.
const BASELINE_RATE: f64 = 0.05;

/// Explicit dual weights `p` over the training set with a cumulative table
/// for sampling proportional to `p`.
#[derive(Debug, Clone)]
pub struct DualState {
    p: Vec<f64>,
    cdf: Vec<f64>,
    baseline: Option<f64>,
    /// Renormalizations that had to raise a weight to the floor.
    pub underflows: u64,
}

impl DualState {
    pub fn uniform(n: usize) -> Self {
        let mut s = Self {
            p: vec![1.0 / n as f64; n],
            cdf: Vec::with_capacity(n),
            baseline: None,
            underflows: 0,
        };
        s.rebuild();
        s
    }

    fn rebuild(&mut self) {
        self.cdf.clear();
        let mut acc = 0.0;
        for &x in &self.p {
            acc += x;
            self.cdf.push(acc);
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.p
    }

    pub fn simplex(&self) -> Result<SimplexWeights> {
        SimplexWeights::new(self.p.clone())
    }

    /// Index drawn with probability `p_i` by binary search on the table.
    pub fn sample(&self, rng: &mut SeededRng) -> usize {
        let total = *self.cdf.last().expect("non-empty dual state");
        let x = rng.random::<f64>() * total;
        self.cdf.partition_point(|&c| c <= x).min(self.p.len() - 1)
    }

    /// Entropic ascent on the sampled coordinates `js` of
    /// `phi(p) = sum_i p_i l_i - lambda sum_i p_i log(n p_i)`.
    ///
    /// Coordinate `j` is scaled by `exp(eta n (d_j - m) / |js|)` where
    /// `d_j = l_j - lambda (log(n p_j) + 1)` and `m` is a running mean of
    /// past `d_j`; `m` is constant across coordinates so it only shifts the
    /// normalization, and it makes `p*` an exact fixed point.
    pub fn ascent(&mut self, js: &[usize], losses: &[f64], lambda: f64, eta: f64) {
        let n = self.p.len() as f64;
        let scale = eta * n / js.len() as f64;
        let grads: Vec<f64> = js
            .iter()
            .zip(losses)
            .map(|(&j, &l)| l - lambda * ((n * self.p[j]).ln() + 1.0))
            .collect();
        let m = *self
            .baseline
            .get_or_insert_with(|| grads.iter().sum::<f64>() / grads.len() as f64);
        for (&j, &d) in js.iter().zip(&grads) {
            self.p[j] *= (scale * (d - m)).exp();
        }
        for &d in &grads {
            self.baseline = Some((1.0 - BASELINE_RATE) * self.baseline.unwrap_or(d) + BASELINE_RATE * d);
        }
        self.normalize();
    }

    fn normalize(&mut self) {
        let mut floored = false;
        for x in &mut self.p {
            if !(*x >= DUAL_FLOOR) || !x.is_finite() {
                *x = if x.is_infinite() { 1.0 / DUAL_FLOOR } else { DUAL_FLOOR };
                floored = true;
            }
        }
        let s: f64 = self.p.iter().sum();
        self.p.iter_mut().for_each(|x| *x /= s);
        if floored {
            self.underflows += 1;
        }
        self.rebuild();
    }

    /// Words held: the weights and their cumulative table.
    pub fn memory_words(&self) -> u64 {
        (self.p.len() + self.cdf.len()) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgdaConfig {
    /// Primal step `beta1 / (tau1 + t)`.
    pub beta1: f64,
    pub tau1: f64,
    /// Dual step `beta2 / (tau2 + t)`.
    pub beta2: f64,
    pub tau2: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
}

impl AgdaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 > 0.0) || !(self.beta2 > 0.0) || !(self.tau1 >= 0.0) || !(self.tau2 >= 0.0) {
            return Err(Error::Configuration("AGDA step parameters must be positive".into()));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Configuration("iterations and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AgdaOutput {
    pub w: ParamVector,
    pub dual: DualState,
    /// Wall-clock spent in dual updates, including table rebuilds.
    pub dual_time_s: f64,
    pub draws: u64,
}

/// Memory of the primal-dual method: `w`, `p` and the sampling table.
pub fn agda_memory_words(param_dim: usize, n: usize) -> u64 {
    (param_dim + 2 * n) as u64
}

/// Stochastic gradient descent-ascent on the min-max form. Each iteration
/// draws `b` points proportional to `p` for the primal step and `b` points
/// uniformly for the dual step, so it consumes `2b` samples.
pub fn stoc_agda_run(
    spec: &DroSpec,
    w0: ParamVector,
    config: &AgdaConfig,
    recorder: &mut Recorder<'_>,
) -> Result<AgdaOutput> {
    config.validate()?;
    spec.validate()?;
    ensure_dim("AGDA iterate", spec.model.param_dim(), w0.dim())?;
    let n = spec.data.len();
    if n == 0 {
        return Err(Error::Configuration("cannot sample from an empty dataset".into()));
    }
    let b = config.batch_size;
    let mut rng = SeededRng::seed_from_u64(config.seed);
    let mut dual = DualState::uniform(n);
    let mut w = w0;
    let mut grad = vec![0.0; w.dim()];
    let mut buf = vec![0.0; w.dim()];
    let mut dual_time = 0.0;
    let mut draws = 0u64;
    let mut js = vec![0usize; b];
    let mut losses = vec![0.0; b];
    let mut eta1 = config.beta1 / (config.tau1 + 1.0);
    recorder.maybe_log(1, 0, 0, &w, eta1, 0)?;
    for t in 1..=config.iterations {
        if recorder.out_of_budget(draws * b as u64) {
            break;
        }
        eta1 = config.beta1 / (config.tau1 + t as f64);
        let eta2 = config.beta2 / (config.tau2 + t as f64);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..b {
            let i = dual.sample(&mut rng);
            spec.model.loss_grad_into(&w, &spec.data.points[i], &mut buf);
            axpy(1.0 / b as f64, &buf, &mut grad);
        }
        let w_next = spec.regularizer.prox(eta1, &w.step(eta1, &grad)?);
        let clock = Instant::now();
        for (j, l) in js.iter_mut().zip(losses.iter_mut()) {
            *j = uniform_index(&mut rng, n);
            *l = spec.model.loss(&w, &spec.data.points[*j]);
        }
        dual.ascent(&js, &losses, spec.lambda, eta2);
        dual_time += clock.elapsed().as_secs_f64();
        w = w_next;
        draws += 2;
        let wn = norm(&w);
        if !wn.is_finite() || wn > DIVERGENCE_NORM {
            return Err(Error::Diverged { t, norm: wn });
        }
        recorder.maybe_log(1, t, draws * b as u64, &w, eta1, dual.underflows)?;
    }
    if recorder.is_enabled() {
        recorder.log(1, draws / 2, draws * b as u64, &w, eta1, dual.underflows)?;
    }
    Ok(AgdaOutput {
        w,
        dual,
        dual_time_s: dual_time,
        draws,
    })
}
