//! KL-regularized DRO as a compositional problem.
//!
//! `F_dro(w) = lambda log((1/n) sum_i exp(l(w; z_i) / lambda)) + r(w)` is
//! written as `f(E g_z(w)) + r(w)` with `f(s) = lambda log s` and the shifted
//! inner map `g_z(w) = exp((l(w; z) - l_max) / lambda)`, so `g_z` lies in
//! `(0, 1]`. Reported objectives add `l_max` back.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{axpy, norm, InnerJacobian, InnerValue, ParamVector};
use crate::models::{Dataset, LossModel};
use crate::optimizers::CoverState;
use crate::problem::{CompositionalProblem, DatasetSize, ProblemConstants, Sample, SeededRng};
use crate::regularizer::Regularizer;

/// Slack allowed above `loss_max` before a loss counts as a bound violation.
const LOSS_BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct DroSpec {
    pub model: Arc<dyn LossModel>,
    pub data: Arc<Dataset>,
    pub lambda: f64,
    /// Upper bound on the loss, subtracted inside the exponential.
    pub loss_max: f64,
    /// Estimated lower bound on the loss, used only for the positivity floor.
    pub loss_min_est: f64,
    pub regularizer: Regularizer,
    pub batch_size: usize,
}

impl DroSpec {
    pub fn new(model: Arc<dyn LossModel>, data: Arc<Dataset>, lambda: f64, loss_max: f64) -> Self {
        Self {
            model,
            data,
            lambda,
            loss_max,
            loss_min_est: 0.0,
            regularizer: Regularizer::Zero,
            batch_size: 1,
        }
    }

    pub fn with_regularizer(mut self, r: Regularizer) -> Self {
        self.regularizer = r;
        self
    }

    pub fn with_batch_size(mut self, b: usize) -> Self {
        self.batch_size = b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Configuration(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !self.loss_max.is_finite() || !self.loss_min_est.is_finite() {
            return Err(Error::Configuration("loss bounds must be finite".into()));
        }
        if self.loss_min_est > self.loss_max {
            return Err(Error::Configuration("loss_min_est exceeds loss_max".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Configuration("batch size must be at least 1".into()));
        }
        if let Some(p) = self.data.points.first() {
            if p.x.len() != self.data.feature_dim() {
                return Err(Error::Configuration("ragged feature vectors".into()));
            }
        }
        self.regularizer.validate()
    }

    /// Losses of every data point at `w`.
    pub fn losses(&self, w: &[f64]) -> Vec<f64> {
        self.data.points.iter().map(|z| self.model.loss(w, z)).collect()
    }
}

/// A probability vector on the `n`-simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights {
    p: Vec<f64>,
}

impl SimplexWeights {
    const TOLERANCE: f64 = 1e-9;

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Argument("empty weight vector".into()));
        }
        if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Argument("weights must be finite and nonnegative".into()));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::Argument(format!("weights sum to {s}, not 1")));
        }
        Ok(Self { p })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            p: vec![1.0 / n as f64; n],
        }
    }

    pub(crate) fn from_normalized(p: Vec<f64>) -> Self {
        Self { p }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.p
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax of `losses / lambda`.
pub fn p_star(losses: &[f64], lambda: f64) -> Result<SimplexWeights> {
    if losses.is_empty() {
        return Err(Error::Argument("p_star needs at least one loss".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Argument(format!("lambda must be positive, got {lambda}")));
    }
    let m = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = losses.iter().map(|l| ((l - m) / lambda).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(SimplexWeights::from_normalized(e.into_iter().map(|x| x / s).collect()))
}

/// `lambda log((1/n) sum_i exp(l_i / lambda))`, the unregularized value.
pub fn kl_dro_value(losses: &[f64], lambda: f64) -> f64 {
    let scaled: Vec<f64> = losses.iter().map(|l| l / lambda).collect();
    lambda * (log_sum_exp(&scaled) - (losses.len() as f64).ln())
}

/// Full-batch `F_dro(w)` via a stable log-sum-exp.
pub fn dro_objective_exact(w: &[f64], spec: &DroSpec) -> Result<f64> {
    if spec.data.is_empty() {
        return Err(Error::Configuration("empty dataset".into()));
    }
    ensure_dim("DRO iterate", spec.model.param_dim(), w.len())?;
    Ok(kl_dro_value(&spec.losses(w), spec.lambda) + spec.regularizer.value(w))
}

/// `sum_i p*_i(w) grad l(w; z_i) + grad r(w)`.
pub fn dro_grad_exact(w: &[f64], spec: &DroSpec) -> Result<ParamVector> {
    if !spec.regularizer.is_smooth() {
        return Err(Error::Unsupported(
            "exact gradient needs a smooth regularizer; use the gradient mapping".into(),
        ));
    }
    if spec.data.is_empty() {
        return Err(Error::Configuration("empty dataset".into()));
    }
    ensure_dim("DRO iterate", spec.model.param_dim(), w.len())?;
    let d = w.len();
    let mut grads = Vec::with_capacity(spec.data.len());
    let mut losses = Vec::with_capacity(spec.data.len());
    for z in &spec.data.points {
        let mut g = vec![0.0; d];
        losses.push(spec.model.loss_grad_into(w, z, &mut g));
        grads.push(g);
    }
    let p = p_star(&losses, spec.lambda)?;
    let mut out = spec.regularizer.grad(w)?;
    for (pi, g) in p.as_slice().iter().zip(&grads) {
        axpy(*pi, g, &mut out);
    }
    Ok(ParamVector::new(out))
}

/// `sum_i p_i l_i - lambda sum_i p_i log(n p_i) + r(w)`, the min-max objective.
pub fn minmax_value(w: &[f64], p: &SimplexWeights, spec: &DroSpec) -> Result<f64> {
    let n = spec.data.len();
    ensure_dim("simplex weights", n, p.len())?;
    let s: f64 = p.as_slice().iter().sum();
    if (s - 1.0).abs() > SimplexWeights::TOLERANCE || p.as_slice().iter().any(|&x| x < 0.0) {
        return Err(Error::Argument("weights are off the simplex".into()));
    }
    let losses = spec.losses(w);
    let nf = n as f64;
    let mut value = 0.0;
    for (&pi, &l) in p.as_slice().iter().zip(&losses) {
        if pi > 0.0 {
            value += pi * l - spec.lambda * pi * (nf * pi).ln();
        }
    }
    Ok(value + spec.regularizer.value(w))
}

/// The DRO objective in compositional form; see the module docs.
#[derive(Debug)]
pub struct KlDroProblem {
    spec: DroSpec,
    violations: AtomicU64,
}

pub fn make_kl_dro(spec: DroSpec) -> Result<KlDroProblem> {
    spec.validate()?;
    Ok(KlDroProblem {
        spec,
        violations: AtomicU64::new(0),
    })
}

impl KlDroProblem {
    pub fn spec(&self) -> &DroSpec {
        &self.spec
    }

    pub fn lambda(&self) -> f64 {
        self.spec.lambda
    }

    /// Number of evaluated losses that exceeded `loss_max`.
    pub fn bound_violations(&self) -> u64 {
        self.violations.load(Ordering::Relaxed)
    }

    /// Batch averages of `g_z(w)` and `g_z(w) grad l(w; z)` (= `lambda grad g_z(w)`).
    pub(crate) fn batch_terms(&self, w: &[f64], sample: &Sample) -> Result<(f64, Vec<f64>)> {
        ensure_dim("DRO iterate", self.param_dim(), w.len())?;
        let d = w.len();
        let mut gl = vec![0.0; d];
        let mut buf = vec![0.0; d];
        let mut g_sum = 0.0;
        for &i in &sample.indices {
            let l = self.spec.model.loss_grad_into(w, &self.spec.data.points[i], &mut buf);
            if l > self.spec.loss_max + LOSS_BOUND_TOLERANCE {
                self.violations.fetch_add(1, Ordering::Relaxed);
            }
            let g = ((l - self.spec.loss_max) / self.spec.lambda).exp();
            g_sum += g;
            axpy(g, &buf, &mut gl);
        }
        let inv = 1.0 / sample.indices.len() as f64;
        gl.iter_mut().for_each(|x| *x *= inv);
        Ok((g_sum * inv, gl))
    }
}

impl CompositionalProblem for KlDroProblem {
    fn param_dim(&self) -> usize {
        self.spec.model.param_dim()
    }

    fn inner_dim(&self) -> usize {
        1
    }

    fn dataset_size(&self) -> DatasetSize {
        DatasetSize::Finite(self.spec.data.len())
    }

    fn batch_size(&self) -> usize {
        self.spec.batch_size
    }

    fn inner_eval(&self, w: &[f64], sample: &Sample) -> Result<(InnerValue, InnerJacobian)> {
        let (g, mut gl) = self.batch_terms(w, sample)?;
        let inv_lambda = 1.0 / self.spec.lambda;
        gl.iter_mut().for_each(|x| *x *= inv_lambda);
        Ok((InnerValue::scalar(g), InnerJacobian::row(gl)))
    }

    fn outer_value(&self, u: &[f64]) -> Result<f64> {
        if !(u[0] > 0.0) {
            return Err(Error::Numeric(format!("log of non-positive inner value u = {}", u[0])));
        }
        Ok(self.spec.lambda * u[0].ln())
    }

    fn outer_grad(&self, u: &[f64]) -> Result<Vec<f64>> {
        if !(u[0] > 0.0) {
            return Err(Error::Numeric(format!("outer gradient at non-positive u = {}", u[0])));
        }
        Ok(vec![self.spec.lambda / u[0]])
    }

    fn regularizer(&self) -> &Regularizer {
        &self.spec.regularizer
    }

    fn objective_offset(&self) -> f64 {
        self.spec.loss_max
    }

    fn exact_objective(&self, w: &[f64]) -> Result<f64> {
        dro_objective_exact(w, &self.spec)
    }

    fn positivity_floor(&self) -> Option<f64> {
        Some(0.5 * (-(self.spec.loss_max - self.spec.loss_min_est) / self.spec.lambda).exp())
    }

    fn is_convex(&self) -> bool {
        self.spec.model.is_convex()
    }
}

/// COVER state specialized to the scalar inner value, carrying
/// `v_tilde = lambda v` instead of `v`.
#[derive(Debug, Clone)]
pub struct DroScalarState {
    pub w: ParamVector,
    pub u: f64,
    pub v_tilde: Vec<f64>,
    pub t: u64,
    pub rng: SeededRng,
    pub draws: u64,
    pub clamp_count: u64,
}

impl DroScalarState {
    pub fn from_cover(state: &CoverState, lambda: f64) -> Self {
        Self {
            w: state.w.clone(),
            u: state.u[0],
            v_tilde: state.v.as_slice().iter().map(|x| lambda * x).collect(),
            t: state.t,
            rng: state.rng.clone(),
            draws: state.draws,
            clamp_count: state.clamp_count,
        }
    }
}

/// One COVER step with scalar `u`: `w <- prox(w - eta v_tilde / u)`.
pub fn cover_step_dro_scalar(
    mut state: DroScalarState,
    problem: &KlDroProblem,
    eta: f64,
    a_next: f64,
) -> Result<DroScalarState> {
    if !(eta > 0.0) || !(a_next > 0.0 && a_next <= 1.0) {
        return Err(Error::Argument(format!("need eta > 0 and a in (0, 1], got {eta}, {a_next}")));
    }
    let mut u = state.u;
    if let Some(floor) = problem.positivity_floor() {
        if u < floor {
            u = floor;
            state.clamp_count += 1;
        }
    }
    let direction: Vec<f64> = state.v_tilde.iter().map(|x| x / u).collect();
    let moved = state.w.step(eta, &direction)?;
    let w_next = problem.prox(eta, &moved);
    if !w_next.is_finite() {
        return Err(Error::NonFiniteIterate {
            t: state.t,
            eta,
            direction_norm: norm(&direction),
        });
    }
    let sample = problem.sample(&mut state.rng)?;
    let (g_new, gl_new) = problem.batch_terms(&w_next, &sample)?;
    let (g_old, gl_old) = problem.batch_terms(&state.w, &sample)?;
    let keep = 1.0 - a_next;
    state.u = g_new + keep * (state.u - g_old);
    for ((vt, n), o) in state.v_tilde.iter_mut().zip(&gl_new).zip(&gl_old) {
        *vt = n + keep * (*vt - o);
    }
    state.w = w_next;
    state.t += 1;
    state.draws += 1;
    Ok(state)
}

/// Analytic bounds for the square loss `(w.x - y)^2` under DRO when
/// `|w.x - y| <= residual_bound` and `|x| <= feature_norm` on the feasible set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareDroBounds {
    pub lambda: f64,
    pub feature_norm: f64,
    pub residual_bound: f64,
}

impl SquareDroBounds {
    /// Residual bound on the box `|w|_inf <= radius` for features with
    /// `|x|_1 <= feature_l1` and labels `|y| <= label_bound`.
    pub fn on_box(lambda: f64, feature_norm: f64, feature_l1: f64, radius: f64, label_bound: f64) -> Self {
        Self {
            lambda,
            feature_norm,
            residual_bound: radius * feature_l1 + label_bound,
        }
    }

    pub fn loss_max(&self) -> f64 {
        self.residual_bound * self.residual_bound
    }

    /// Smallest attainable inner value `exp(-l_max / lambda)`.
    pub fn inner_min(&self) -> f64 {
        (-self.loss_max() / self.lambda).exp()
    }

    pub fn constants(&self, mu: f64, delta_f: f64) -> Result<ProblemConstants> {
        let lam = self.lambda;
        let s_min = self.inner_min();
        let x = self.feature_norm;
        let rho = self.residual_bound;
        let c_f = lam / s_min;
        let l_f = lam / (s_min * s_min);
        let c_g = 2.0 * rho * x / lam;
        let l_g = 4.0 * rho * rho * x * x / (lam * lam) + 2.0 * x * x / lam;
        let sigma_g = 0.5 * (1.0 - s_min);
        ProblemConstants::from_assumptions(c_f, l_f, c_g, l_g, sigma_g, c_g, mu, delta_f)
    }
}
