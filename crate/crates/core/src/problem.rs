//! The two-level compositional problem `F(w) = f(E_z g_z(w)) + r(w)`.

use std::sync::Arc;

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::linalg::{axpy, InnerJacobian, InnerValue, ParamVector};
use crate::models::{uniform_index, Dataset, LossModel};
use crate::regularizer::Regularizer;

/// Generator used for every stochastic choice in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Indices of the data points making up one draw (a mini-batch of size b).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSize {
    Finite(usize),
    Streaming,
}

/// Sampling interface consumed by every optimizer.
///
/// A sample is a uniform mini-batch drawn with replacement; the inner value
/// and Jacobian of a sample are the batch averages.
pub trait CompositionalProblem: Send + Sync {
    fn param_dim(&self) -> usize;

    /// Dimension `p` of the inner map.
    fn inner_dim(&self) -> usize;

    fn dataset_size(&self) -> DatasetSize;

    fn batch_size(&self) -> usize {
        1
    }

    fn sample(&self, rng: &mut SeededRng) -> Result<Sample> {
        match self.dataset_size() {
            DatasetSize::Finite(0) => Err(Error::Configuration("cannot sample from an empty dataset".into())),
            DatasetSize::Finite(n) => Ok(Sample {
                indices: (0..self.batch_size()).map(|_| uniform_index(rng, n)).collect(),
            }),
            DatasetSize::Streaming => Err(Error::Unsupported("streaming problems must override sample".into())),
        }
    }

    /// `(g_z(w), grad g_z(w))` on one sample.
    fn inner_eval(&self, w: &[f64], sample: &Sample) -> Result<(InnerValue, InnerJacobian)>;

    fn inner_value(&self, w: &[f64], sample: &Sample) -> Result<InnerValue> {
        Ok(self.inner_eval(w, sample)?.0)
    }

    fn inner_jacobian(&self, w: &[f64], sample: &Sample) -> Result<InnerJacobian> {
        Ok(self.inner_eval(w, sample)?.1)
    }

    fn outer_value(&self, u: &[f64]) -> Result<f64>;

    fn outer_grad(&self, u: &[f64]) -> Result<Vec<f64>>;

    fn regularizer(&self) -> &Regularizer;

    fn prox(&self, eta: f64, w: &[f64]) -> ParamVector {
        self.regularizer().prox(eta, w)
    }

    /// Full-batch `(g(w), grad g(w))`.
    fn exact_inner_eval(&self, w: &[f64]) -> Result<(InnerValue, InnerJacobian)> {
        let n = match self.dataset_size() {
            DatasetSize::Finite(0) => return Err(Error::Configuration("empty dataset".into())),
            DatasetSize::Finite(n) => n,
            DatasetSize::Streaming => {
                return Err(Error::Unsupported("no exact oracle for a streaming problem".into()))
            }
        };
        let mut value = InnerValue::zeros(self.inner_dim());
        let mut jac = InnerJacobian::zeros(self.inner_dim(), self.param_dim());
        let mut one = Sample { indices: vec![0] };
        for i in 0..n {
            one.indices[0] = i;
            let (gv, gj) = self.inner_eval(w, &one)?;
            axpy(1.0, &gv, &mut value);
            axpy(1.0, gj.as_slice(), jac.as_mut_slice());
        }
        let inv = 1.0 / n as f64;
        value.iter_mut().for_each(|x| *x *= inv);
        jac.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
        Ok((value, jac))
    }

    fn exact_inner(&self, w: &[f64]) -> Result<InnerValue> {
        Ok(self.exact_inner_eval(w)?.0)
    }

    /// Constant added to `f(g(w)) + r(w)` when reporting the objective.
    fn objective_offset(&self) -> f64 {
        0.0
    }

    /// `F(w)` as reported in run records.
    fn exact_objective(&self, w: &[f64]) -> Result<f64> {
        let u = self.exact_inner(w)?;
        Ok(self.outer_value(&u)? + self.objective_offset() + self.regularizer().value(w))
    }

    /// Lower bound applied to `u` before evaluating `grad f(u)`.
    fn positivity_floor(&self) -> Option<f64> {
        None
    }

    fn is_convex(&self) -> bool {
        false
    }
}

/// `prox^eta_r(w - eta * direction)`.
pub fn prox_step(
    w: &[f64],
    direction: &[f64],
    eta: f64,
    problem: &dyn CompositionalProblem,
) -> Result<ParamVector> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Argument(format!("step size must be positive, got {eta}")));
    }
    ensure_dim("prox_step iterate", problem.param_dim(), w.len())?;
    ensure_dim("prox_step direction", w.len(), direction.len())?;
    ensure_finite("prox_step iterate", w)?;
    ensure_finite("prox_step direction", direction)?;
    let moved = ParamVector::new(w.to_vec()).step(eta, direction)?;
    Ok(problem.prox(eta, &moved))
}

/// `v^T grad f(u)`.
pub fn composite_grad_estimate(
    u: &[f64],
    v: &InnerJacobian,
    problem: &dyn CompositionalProblem,
) -> Result<ParamVector> {
    ensure_dim("composite gradient inner value", problem.inner_dim(), u.len())?;
    ensure_dim("composite gradient jacobian rows", u.len(), v.rows())?;
    let gf = problem.outer_grad(u)?;
    if gf.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite outer gradient at u = {u:?}")));
    }
    Ok(ParamVector::new(v.transpose_mul(&gf)?))
}

/// Smoothness, Lipschitz and variance constants of a compositional problem.
///
/// The individual Lipschitz constants are optional; when all four are known
/// the aggregate `l_agg` must dominate twice the largest of the ten products
/// that enter the analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    pub c_f: Option<f64>,
    pub l_f: Option<f64>,
    pub c_g: Option<f64>,
    pub l_g: Option<f64>,
    pub sigma_g: f64,
    pub sigma_gp: f64,
    pub sigma: f64,
    pub l_agg: f64,
    /// PL constant; zero when unknown.
    pub mu: f64,
    pub delta_f: f64,
}

impl ProblemConstants {
    /// `2 max{L_g C_g L_f, C_f C_g L_f, C_f^2, L_g C_f, C_g^2 L_f, C_f, C_g L_f, C_f^2, C_g^2, C_g^2 L_f^2}`
    pub fn aggregate_l(c_f: f64, l_f: f64, c_g: f64, l_g: f64) -> f64 {
        let products = [
            l_g * c_g * l_f,
            c_f * c_g * l_f,
            c_f * c_f,
            l_g * c_f,
            c_g * c_g * l_f,
            c_f,
            c_g * l_f,
            c_f * c_f,
            c_g * c_g,
            c_g * c_g * l_f * l_f,
        ];
        2.0 * products.into_iter().fold(0.0, f64::max)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_assumptions(
        c_f: f64,
        l_f: f64,
        c_g: f64,
        l_g: f64,
        sigma_g: f64,
        sigma_gp: f64,
        mu: f64,
        delta_f: f64,
    ) -> Result<Self> {
        let c = Self {
            c_f: Some(c_f),
            l_f: Some(l_f),
            c_g: Some(c_g),
            l_g: Some(l_g),
            sigma_g,
            sigma_gp,
            sigma: sigma_g.hypot(sigma_gp),
            l_agg: Self::aggregate_l(c_f, l_f, c_g, l_g),
            mu,
            delta_f,
        };
        c.validate()?;
        Ok(c)
    }

    /// Constants given directly by their aggregate `L` and total `sigma`;
    /// the variance is split evenly between the two estimators.
    pub fn from_aggregate(l_agg: f64, sigma: f64, mu: f64, delta_f: f64) -> Result<Self> {
        let half = sigma / std::f64::consts::SQRT_2;
        let c = Self {
            c_f: None,
            l_f: None,
            c_g: None,
            l_g: None,
            sigma_g: half,
            sigma_gp: half,
            sigma,
            l_agg,
            mu,
            delta_f,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Configuration(format!("{name} must be positive and finite, got {x}")))
            }
        };
        for (name, x) in [("c_f", self.c_f), ("l_f", self.l_f), ("c_g", self.c_g), ("l_g", self.l_g)] {
            if let Some(x) = x {
                positive(name, x)?;
            }
        }
        positive("sigma_g", self.sigma_g)?;
        positive("sigma_gp", self.sigma_gp)?;
        positive("sigma", self.sigma)?;
        positive("l_agg", self.l_agg)?;
        positive("delta_f", self.delta_f)?;
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::Configuration(format!("mu must be nonnegative, got {}", self.mu)));
        }
        let s2 = self.sigma_g * self.sigma_g + self.sigma_gp * self.sigma_gp;
        if ((self.sigma * self.sigma) - s2).abs() > 1e-12 * s2 {
            return Err(Error::Configuration("sigma^2 must equal sigma_g^2 + sigma_gp^2".into()));
        }
        if let (Some(c_f), Some(l_f), Some(c_g), Some(l_g)) = (self.c_f, self.l_f, self.c_g, self.l_g) {
            let need = Self::aggregate_l(c_f, l_f, c_g, l_g);
            if self.l_agg < need * (1.0 - 1e-12) {
                return Err(Error::Configuration(format!(
                    "aggregate L = {} is below the required {need}",
                    self.l_agg
                )));
            }
        }
        Ok(())
    }
}

/// Empirical risk `(1/n) sum_i l(w; z_i) + r(w)` written as a compositional
/// problem with identity outer map.
#[derive(Debug, Clone)]
pub struct ErmProblem {
    pub model: Arc<dyn LossModel>,
    pub data: Arc<Dataset>,
    pub regularizer: Regularizer,
    pub batch_size: usize,
}

impl ErmProblem {
    pub fn new(model: Arc<dyn LossModel>, data: Arc<Dataset>, regularizer: Regularizer) -> Self {
        Self {
            model,
            data,
            regularizer,
            batch_size: 1,
        }
    }

    pub fn with_batch_size(mut self, b: usize) -> Self {
        self.batch_size = b;
        self
    }
}

impl CompositionalProblem for ErmProblem {
    fn param_dim(&self) -> usize {
        self.model.param_dim()
    }

    fn inner_dim(&self) -> usize {
        1
    }

    fn dataset_size(&self) -> DatasetSize {
        DatasetSize::Finite(self.data.len())
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn inner_eval(&self, w: &[f64], sample: &Sample) -> Result<(InnerValue, InnerJacobian)> {
        ensure_dim("ERM iterate", self.param_dim(), w.len())?;
        let d = self.param_dim();
        let mut jac = vec![0.0; d];
        let mut buf = vec![0.0; d];
        let mut value = 0.0;
        for &i in &sample.indices {
            value += self.model.loss_grad_into(w, &self.data.points[i], &mut buf);
            axpy(1.0, &buf, &mut jac);
        }
        let inv = 1.0 / sample.indices.len() as f64;
        jac.iter_mut().for_each(|x| *x *= inv);
        Ok((InnerValue::scalar(value * inv), InnerJacobian::row(jac)))
    }

    fn outer_value(&self, u: &[f64]) -> Result<f64> {
        Ok(u[0])
    }

    fn outer_grad(&self, _u: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }

    fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    fn is_convex(&self) -> bool {
        self.model.is_convex()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DataPoint, SquareLoss};
    use rand::SeedableRng;

    fn erm(points: Vec<DataPoint>, r: Regularizer) -> ErmProblem {
        let d = points[0].x.len();
        ErmProblem::new(Arc::new(SquareLoss::new(d)), Arc::new(Dataset::new(points)), r)
    }

    fn two_point(r: Regularizer) -> ErmProblem {
        erm(
            vec![DataPoint::new(vec![1.0, 0.0], 1.0), DataPoint::new(vec![0.0, 1.0], -1.0)],
            r,
        )
    }

    #[test]
    fn prox_step_identity() {
        let p = two_point(Regularizer::Zero);
        let w = prox_step(&[1.0, 2.0], &[1.0, 0.0], 0.5, &p).unwrap();
        assert_eq!(&*w, &[0.5, 2.0]);
    }

    #[test]
    fn prox_step_quadratic_and_box() {
        let p = erm(vec![DataPoint::new(vec![1.0], 0.0)], Regularizer::Ridge { gamma: 2.0 });
        assert_eq!(&*prox_step(&[2.0], &[0.0], 0.5, &p).unwrap(), &[1.0]);
        let p = two_point(Regularizer::linf_ball(1.0));
        assert_eq!(&*prox_step(&[3.0, -0.5], &[0.0, 0.0], 1.0, &p).unwrap(), &[1.0, -0.5]);
    }

    #[test]
    fn prox_step_rejects_bad_input() {
        let p = two_point(Regularizer::Zero);
        assert!(matches!(
            prox_step(&[1.0, 2.0], &[1.0], 0.5, &p),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            prox_step(&[f64::NAN, 2.0], &[1.0, 0.0], 0.5, &p),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(prox_step(&[1.0, 2.0], &[1.0, 0.0], 0.0, &p), Err(Error::Argument(_))));
    }

    #[test]
    fn identity_outer_map_gives_column_sum() {
        let p = two_point(Regularizer::Zero);
        let v = InnerJacobian::row(vec![3.0, -4.0]);
        assert_eq!(&*composite_grad_estimate(&[7.0], &v, &p).unwrap(), &[3.0, -4.0]);
        let zero = InnerJacobian::zeros(1, 2);
        assert_eq!(&*composite_grad_estimate(&[7.0], &zero, &p).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn exact_inner_is_the_mean() {
        let p = two_point(Regularizer::Zero);
        let (g, j) = p.exact_inner_eval(&[0.0, 0.0]).unwrap();
        assert_eq!(g[0], 1.0);
        assert_eq!(j.as_slice(), &[-1.0, 1.0]);
        assert_eq!(p.exact_objective(&[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn batch_is_averaged() {
        let p = two_point(Regularizer::Zero).with_batch_size(2);
        let s = Sample { indices: vec![0, 1] };
        let (g, j) = p.inner_eval(&[0.0, 0.0], &s).unwrap();
        assert_eq!(g[0], 1.0);
        assert_eq!(j.as_slice(), &[-1.0, 1.0]);
        let mut rng = SeededRng::seed_from_u64(0);
        assert_eq!(p.sample(&mut rng).unwrap().indices.len(), 2);
    }

    #[test]
    fn empty_dataset_cannot_be_sampled() {
        let p = ErmProblem::new(
            Arc::new(SquareLoss::new(1)),
            Arc::new(Dataset::new(vec![])),
            Regularizer::Zero,
        );
        let mut rng = SeededRng::seed_from_u64(0);
        assert!(matches!(p.sample(&mut rng), Err(Error::Configuration(_))));
    }

    #[test]
    fn constants_aggregate() {
        let c = ProblemConstants::from_assumptions(1.0, 2.0, 3.0, 4.0, 0.3, 0.4, 0.0, 1.0).unwrap();
        // largest product is C_g^2 L_f^2 = 36
        assert_eq!(c.l_agg, 72.0);
        assert!((c.sigma - 0.5).abs() < 1e-15);
        let mut bad = c;
        bad.l_agg = 1.0;
        assert!(bad.validate().is_err());
        assert!(ProblemConstants::from_aggregate(1.0, 1.0, -0.1, 1.0).is_err());
    }
}
