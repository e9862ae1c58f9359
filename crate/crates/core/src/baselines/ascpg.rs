use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::linalg::{norm, InnerValue, ParamVector};
use crate::optimizers::DIVERGENCE_NORM;
use crate::problem::{composite_grad_estimate, CompositionalProblem, SeededRng};
use crate::record::Recorder;

/// Two-timescale compositional gradient: `u` is a running average of
/// sampled inner values, `w` moves along a fresh Jacobian sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscPgConfig {
    pub c0: f64,
    /// Step size `eta_t = c0 / t^a_exp`.
    pub a_exp: f64,
    /// Averaging weight `beta_t = min(1, 2 c0 / t^b_exp)`.
    pub b_exp: f64,
    pub iterations: u64,
    pub seed: u64,
}

impl AscPgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0) {
            return Err(Error::Configuration("c0 must be positive".into()));
        }
        if !(self.a_exp > 0.0 && self.a_exp < 1.0) || !(self.b_exp > 0.0 && self.b_exp < 1.0) {
            return Err(Error::Configuration("exponents must lie in (0, 1)".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Argument("ASC-PG needs at least one iteration".into()));
        }
        Ok(())
    }

    pub fn eta(&self, t: u64) -> f64 {
        self.c0 / (t as f64).powf(self.a_exp)
    }

    pub fn beta(&self, t: u64) -> f64 {
        (2.0 * self.c0 / (t as f64).powf(self.b_exp)).min(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct AscPgState {
    pub w: ParamVector,
    pub u: InnerValue,
    pub t: u64,
    pub rng: SeededRng,
    pub draws: u64,
}

/// One sample at `w1` initializes `u`.
pub fn ascpg_init(problem: &dyn CompositionalProblem, w1: ParamVector, seed: u64) -> Result<AscPgState> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let z = problem.sample(&mut rng)?;
    let u = problem.inner_value(&w1, &z)?;
    Ok(AscPgState {
        w: w1,
        u,
        t: 1,
        rng,
        draws: 1,
    })
}

/// `w+ = prox(w - eta J_z(w)^T grad f(u))`, `u+ = (1 - beta) u + beta g_z(w+)`
/// on one fresh sample `z`.
pub fn ascpg_step(
    mut s: AscPgState,
    problem: &dyn CompositionalProblem,
    eta: f64,
    beta: f64,
) -> Result<AscPgState> {
    let z = problem.sample(&mut s.rng)?;
    let jac = problem.inner_jacobian(&s.w, &z)?;
    let u_eval: Vec<f64> = match problem.positivity_floor() {
        Some(f) => s.u.iter().map(|&x| x.max(f)).collect(),
        None => s.u.to_vec(),
    };
    let d = composite_grad_estimate(&u_eval, &jac, problem)?;
    let w_next = problem.prox(eta, &s.w.step(eta, &d)?);
    if !w_next.is_finite() {
        return Err(Error::NonFiniteIterate {
            t: s.t,
            eta,
            direction_norm: norm(&d),
        });
    }
    let g = problem.inner_value(&w_next, &z)?;
    for (u, gi) in s.u.iter_mut().zip(g.iter()) {
        *u = (1.0 - beta) * *u + beta * gi;
    }
    s.w = w_next;
    s.t += 1;
    s.draws += 1;
    Ok(s)
}

pub fn ascpg_run(
    problem: &dyn CompositionalProblem,
    w1: ParamVector,
    config: &AscPgConfig,
    recorder: &mut Recorder<'_>,
) -> Result<ParamVector> {
    config.validate()?;
    let b = problem.batch_size() as u64;
    let mut s = ascpg_init(problem, w1, config.seed)?;
    recorder.maybe_log(1, 0, b, &s.w, config.eta(1), 0)?;
    for t in 1..=config.iterations {
        if recorder.out_of_budget(s.draws * b) {
            break;
        }
        let eta = config.eta(t);
        s = ascpg_step(s, problem, eta, config.beta(t))?;
        let n = s.w.norm();
        if n > DIVERGENCE_NORM {
            return Err(Error::Diverged { t, norm: n });
        }
        recorder.maybe_log(1, t, s.draws * b, &s.w, eta, 0)?;
    }
    if recorder.is_enabled() {
        recorder.log(1, s.t - 1, s.draws * b, &s.w, config.eta(s.t - 1), 0)?;
    }
    Ok(s.w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dro::{make_kl_dro, DroSpec};
    use crate::models::{DataPoint, Dataset, SquareLoss};
    use std::sync::Arc;

    fn single_point() -> crate::dro::KlDroProblem {
        let data = Dataset::new(vec![DataPoint::new(vec![1.0, 1.0], 1.0)]);
        make_kl_dro(DroSpec::new(Arc::new(SquareLoss::new(2)), Arc::new(data), 1.0, 10.0)).unwrap()
    }

    #[test]
    fn full_weight_tracks_the_sample() {
        let p = single_point();
        let mut s = ascpg_init(&p, ParamVector::new(vec![2.0, 0.0]), 1).unwrap();
        for _ in 0..10 {
            s = ascpg_step(s, &p, 0.01, 1.0).unwrap();
            assert_eq!(s.u, p.exact_inner(&s.w).unwrap());
        }
    }

    #[test]
    fn averaging_contracts_geometrically() {
        let p = single_point();
        // w = (0.5, 0.5) fits the point exactly so it never moves
        let mut s = ascpg_init(&p, ParamVector::new(vec![0.5, 0.5]), 1).unwrap();
        let g = p.exact_inner(&s.w).unwrap()[0];
        s.u[0] = g + 0.3;
        let beta = 0.2;
        for k in 1..=30 {
            s = ascpg_step(s, &p, 0.1, beta).unwrap();
            let expect = 0.3 * (1.0 - beta).powi(k);
            assert!(((s.u[0] - g) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn schedule_laws() {
        let c = AscPgConfig {
            c0: 0.1,
            a_exp: 0.5,
            b_exp: 0.25,
            iterations: 1,
            seed: 0,
        };
        assert!((c.eta(4) - 0.05).abs() < 1e-15);
        assert!((c.beta(16) - 0.1).abs() < 1e-15);
        let big = AscPgConfig { c0: 2.0, ..c };
        assert_eq!(big.beta(1), 1.0);
        assert!(AscPgConfig { a_exp: 1.0, ..c }.validate().is_err());
    }

    #[test]
    fn one_sample_per_iteration() {
        let p = single_point();
        let cfg = AscPgConfig {
            c0: 0.05,
            a_exp: 0.5,
            b_exp: 0.5,
            iterations: 40,
            seed: 2,
        };
        let mut rec = Recorder::new(crate::record::LogSettings::every(1), None);
        ascpg_run(&p, ParamVector::zeros(2), &cfg, &mut rec).unwrap();
        assert_eq!(rec.finish().last().unwrap().samples_seen, 41);
    }
}
