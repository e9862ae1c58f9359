//! COVER: proximal compositional descent with STORM-style estimators of the
//! inner value and its Jacobian.

use rand::{Rng, SeedableRng};

use super::schedule::StepSchedule;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{norm, InnerJacobian, InnerValue, ParamVector};
use crate::problem::{composite_grad_estimate, CompositionalProblem, SeededRng};
use crate::record::{LogSettings, Monitor, Recorder, RunRecord};

/// Iterates above this norm abort the run.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct CoverState {
    pub w: ParamVector,
    /// Estimate of `g(w)`.
    pub u: InnerValue,
    /// Estimate of `grad g(w)`.
    pub v: InnerJacobian,
    /// Step counter, 1 after initialization.
    pub t: u64,
    pub rng: SeededRng,
    /// Sample draws so far (each draw is one mini-batch).
    pub draws: u64,
    /// Times `u` was raised to the positivity floor before evaluating `grad f`.
    pub clamp_count: u64,
}

/// Words of optimizer state: `w`, `u` and `v`.
pub fn cover_memory_words(param_dim: usize, inner_dim: usize) -> u64 {
    (param_dim + inner_dim + inner_dim * param_dim) as u64
}

/// Draws one sample at `w1` and sets `u = g_z(w1)`, `v = grad g_z(w1)`.
pub fn cover_init(problem: &dyn CompositionalProblem, w1: ParamVector, seed: u64) -> Result<CoverState> {
    ensure_dim("initial iterate", problem.param_dim(), w1.dim())?;
    if !w1.is_finite() {
        return Err(Error::Argument("initial iterate is not finite".into()));
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let sample = problem.sample(&mut rng)?;
    let (u, v) = problem.inner_eval(&w1, &sample)?;
    Ok(CoverState {
        w: w1,
        u,
        v,
        t: 1,
        rng,
        draws: 1,
        clamp_count: 0,
    })
}

/// `u` with every coordinate raised to the problem's positivity floor.
fn floored(u: &InnerValue, problem: &dyn CompositionalProblem, clamps: &mut u64) -> Vec<f64> {
    match problem.positivity_floor() {
        Some(floor) if u.iter().any(|&x| x < floor) => {
            *clamps += 1;
            u.iter().map(|&x| x.max(floor)).collect()
        }
        _ => u.to_vec(),
    }
}

/// One COVER iteration; consumes exactly one sample.
pub fn cover_step(
    mut state: CoverState,
    problem: &dyn CompositionalProblem,
    eta: f64,
    a_next: f64,
) -> Result<CoverState> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Argument(format!("eta must be positive, got {eta}")));
    }
    if !(a_next > 0.0 && a_next <= 1.0) {
        return Err(Error::Argument(format!("a must lie in (0, 1], got {a_next}")));
    }
    let u_eval = floored(&state.u, problem, &mut state.clamp_count);
    let direction = composite_grad_estimate(&u_eval, &state.v, problem)?;
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
    let (g_new, j_new) = problem.inner_eval(&w_next, &sample)?;
    let (g_old, j_old) = problem.inner_eval(&state.w, &sample)?;
    let keep = 1.0 - a_next;
    for ((u, n), o) in state.u.iter_mut().zip(g_new.iter()).zip(g_old.iter()) {
        *u = n + keep * (*u - o);
    }
    let v = state.v.as_mut_slice();
    for ((v, n), o) in v.iter_mut().zip(j_new.as_slice()).zip(j_old.as_slice()) {
        *v = n + keep * (*v - o);
    }
    state.w = w_next;
    state.t += 1;
    state.draws += 1;
    Ok(state)
}

/// Which iterate a COVER run returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReturnMode {
    #[default]
    Last,
    /// The state after a uniformly drawn number of steps in `1..=T`.
    UniformRandom,
}

/// Whether a run draws fresh estimators or continues from a state.
#[derive(Debug, Clone)]
pub enum Start {
    Cold(ParamVector),
    /// Used verbatim; no initialization sample is drawn.
    Warm(CoverState),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverConfig {
    pub schedule: StepSchedule,
    pub iterations: u64,
    pub seed: u64,
    pub return_mode: ReturnMode,
}

/// Stream of the generator that draws the returned index, kept apart from
/// the sample stream so both modes see the same samples.
const RETURN_INDEX_STREAM: u64 = 1;

pub(crate) fn check_divergence(state: &CoverState) -> Result<()> {
    let n = state.w.norm();
    if n > DIVERGENCE_NORM || !n.is_finite() {
        return Err(Error::Diverged { t: state.t, norm: n });
    }
    Ok(())
}

/// Runs `iterations` constant-schedule or polynomial-schedule steps of COVER.
///
/// The returned state carries the sample generator and draw count of the
/// end of the run even when an earlier iterate is returned.
pub fn cover_run_recorded(
    problem: &dyn CompositionalProblem,
    start: Start,
    config: &CoverConfig,
    recorder: &mut Recorder<'_>,
    stage: usize,
) -> Result<CoverState> {
    if config.iterations == 0 {
        return Err(Error::Argument("COVER needs at least one iteration".into()));
    }
    config.schedule.validate()?;
    let b = problem.batch_size() as u64;
    let mut state = match start {
        Start::Cold(w1) => cover_init(problem, w1, config.seed)?,
        Start::Warm(s) => s,
    };
    let tau = match config.return_mode {
        ReturnMode::Last => config.iterations,
        ReturnMode::UniformRandom => {
            let mut r = SeededRng::seed_from_u64(config.seed);
            r.set_stream(RETURN_INDEX_STREAM);
            r.random_range(1..=config.iterations)
        }
    };
    let mut chosen: Option<CoverState> = None;
    let first_t = state.t;
    recorder.maybe_log(
        stage,
        state.t - 1,
        state.draws * b,
        &state.w,
        config.schedule.eta(1),
        state.clamp_count,
    )?;
    for i in 1..=config.iterations {
        if recorder.out_of_budget(state.draws * b) {
            break;
        }
        let step = state.t - first_t + 1;
        let eta = config.schedule.eta(step);
        let a = config.schedule.a_next(step);
        state = cover_step(state, problem, eta, a)?;
        check_divergence(&state)?;
        recorder.maybe_log(stage, state.t - 1, state.draws * b, &state.w, eta, state.clamp_count)?;
        if i == tau {
            chosen = Some(state.clone());
        }
    }
    if recorder.is_enabled() {
        let last_eta = config.schedule.eta(state.t - first_t);
        recorder.log(stage, state.t - 1, state.draws * b, &state.w, last_eta, state.clamp_count)?;
    }
    Ok(match chosen {
        Some(mut c) if config.return_mode == ReturnMode::UniformRandom => {
            c.rng = state.rng;
            c.draws = state.draws;
            c.clamp_count = state.clamp_count;
            c
        }
        _ => state,
    })
}

/// [`cover_run_recorded`] with its own recorder.
pub fn cover_run(
    problem: &dyn CompositionalProblem,
    start: Start,
    config: &CoverConfig,
    log: &LogSettings,
    monitor: Option<&dyn Monitor>,
) -> Result<(CoverState, RunRecord)> {
    let mut recorder = Recorder::new(*log, monitor);
    let state = cover_run_recorded(problem, start, config, &mut recorder, 1)?;
    Ok((state, recorder.finish()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dro::{make_kl_dro, DroSpec};
    use crate::linalg::{axpy, max_abs_diff};
    use crate::models::{make_regression_dataset, DataPoint, Dataset, LossModel, RegressionSpec, SquareLoss};
    use crate::problem::{ErmProblem, Sample};
    use crate::regularizer::Regularizer;
    use std::sync::Arc;

    fn regression(n: usize, d: usize, seed: u64) -> Dataset {
        make_regression_dataset(&RegressionSpec {
            n,
            dim: d,
            feature_scale: 1.0,
            weight_scale: 1.0,
            noise: 0.1,
            y_clip: 3.0,
            seed,
        })
        .unwrap()
        .data
    }

    fn erm(n: usize, d: usize, seed: u64) -> ErmProblem {
        ErmProblem::new(Arc::new(SquareLoss::new(d)), Arc::new(regression(n, d, seed)), Regularizer::Zero)
    }

    fn dro(n: usize, d: usize, seed: u64, r: Regularizer) -> crate::dro::KlDroProblem {
        make_kl_dro(
            DroSpec::new(Arc::new(SquareLoss::new(d)), Arc::new(regression(n, d, seed)), 2.0, 40.0)
                .with_regularizer(r),
        )
        .unwrap()
    }

    /// Plain STORM on the finite-sum square loss, written from scratch.
    fn storm_reference(data: &Dataset, w1: &[f64], seed: u64, eta: f64, a: f64, steps: usize) -> Vec<f64> {
        let model = SquareLoss::new(w1.len());
        let mut rng = SeededRng::seed_from_u64(seed);
        let n = data.len();
        let mut idx = rng.random_range(0..n);
        let mut w = w1.to_vec();
        let mut d = model.grad(&w, &data.points[idx]);
        for _ in 0..steps {
            let mut next = w.clone();
            axpy(-eta, &d, &mut next);
            idx = rng.random_range(0..n);
            let g_new = model.grad(&next, &data.points[idx]);
            let g_old = model.grad(&w, &data.points[idx]);
            for j in 0..d.len() {
                d[j] = g_new[j] + (1.0 - a) * (d[j] - g_old[j]);
            }
            w = next;
        }
        w
    }

    #[test]
    fn identity_outer_map_is_storm() {
        let p = erm(50, 4, 1);
        let w1 = ParamVector::new(vec![0.5, -0.5, 0.25, 0.0]);
        let mut s = cover_init(&p, w1.clone(), 42).unwrap();
        for k in 1..=100 {
            s = cover_step(s, &p, 0.05, 0.3).unwrap();
            let r = storm_reference(&p.data, &w1, 42, 0.05, 0.3, k);
            assert!(max_abs_diff(&s.w, &r) <= 1e-14);
        }
    }

    #[test]
    fn unit_momentum_gives_plain_estimator() {
        let p = dro(30, 3, 2, Regularizer::Zero);
        let mut s = cover_init(&p, ParamVector::zeros(3), 5).unwrap();
        for _ in 0..20 {
            let mut rng = s.rng.clone();
            s = cover_step(s, &p, 0.1, 1.0).unwrap();
            let z = p.sample(&mut rng).unwrap();
            let (g, j) = p.inner_eval(&s.w, &z).unwrap();
            assert_eq!(s.u, g);
            assert_eq!(s.v, j);
        }
    }

    #[test]
    fn single_point_collapses_to_gradient_descent() {
        let data = Dataset::new(vec![DataPoint::new(vec![1.0, 2.0, -1.0], 0.5)]);
        let p = make_kl_dro(DroSpec::new(Arc::new(SquareLoss::new(3)), Arc::new(data.clone()), 1.5, 40.0)).unwrap();
        let cfg = StepSchedule::Constant { eta: 0.02, a: 0.1 };
        let mut s = cover_init(&p, ParamVector::new(vec![0.3, 0.0, 0.1]), 0).unwrap();
        let mut w = s.w.to_vec();
        let model = SquareLoss::new(3);
        for step in 1..=50 {
            let eta = cfg.eta(step);
            s = cover_step(s, &p, eta, cfg.a_next(step)).unwrap();
            let g = model.grad(&w, &data.points[0]);
            axpy(-eta, &g, &mut w);
            let (gv, gj) = p.exact_inner_eval(&s.w).unwrap();
            assert_eq!(s.u, gv);
            assert!(max_abs_diff(s.v.as_slice(), gj.as_slice()) <= 1e-15 * norm(gj.as_slice()).max(1.0));
            assert!(max_abs_diff(&s.w, &w) <= 1e-12);
        }
    }

    #[test]
    fn init_on_single_point_is_exact() {
        let data = Dataset::new(vec![DataPoint::new(vec![1.0, -1.0], 2.0)]);
        let p = ErmProblem::new(Arc::new(SquareLoss::new(2)), Arc::new(data), Regularizer::Zero);
        let w = ParamVector::new(vec![0.2, 0.4]);
        let s = cover_init(&p, w.clone(), 9).unwrap();
        let (g, j) = p.exact_inner_eval(&w).unwrap();
        assert_eq!(s.u, g);
        assert_eq!(s.v, j);
        assert_eq!((s.t, s.draws), (1, 1));
    }

    #[test]
    fn empty_dataset_is_a_configuration_error() {
        let p = ErmProblem::new(Arc::new(SquareLoss::new(1)), Arc::new(Dataset::new(vec![])), Regularizer::Zero);
        assert!(matches!(cover_init(&p, ParamVector::zeros(1), 0), Err(Error::Configuration(_))));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let p = dro(40, 3, 3, Regularizer::linf_ball(2.0));
        let cfg = CoverConfig {
            schedule: StepSchedule::Constant { eta: 0.05, a: 0.2 },
            iterations: 300,
            seed: 11,
            return_mode: ReturnMode::UniformRandom,
        };
        let a = cover_run(&p, Start::Cold(ParamVector::zeros(3)), &cfg, &LogSettings::every(10), None).unwrap();
        let b = cover_run(&p, Start::Cold(ParamVector::zeros(3)), &cfg, &LogSettings::every(10), None).unwrap();
        assert_eq!(a.0.w, b.0.w);
        assert_eq!(a.0.u, b.0.u);
        assert_eq!(a.1.rows.len(), b.1.rows.len());
    }

    #[test]
    fn sample_accounting() {
        let p = dro(40, 3, 3, Regularizer::Zero);
        let cfg = CoverConfig {
            schedule: StepSchedule::Constant { eta: 0.05, a: 0.2 },
            iterations: 123,
            seed: 1,
            return_mode: ReturnMode::Last,
        };
        let (cold, rec) = cover_run(&p, Start::Cold(ParamVector::zeros(3)), &cfg, &LogSettings::every(1), None).unwrap();
        assert_eq!(cold.draws, 124);
        assert_eq!(rec.last().unwrap().samples_seen, 124);
        let before = cold.draws;
        let (warm, _) = cover_run(&p, Start::Warm(cold), &cfg, &LogSettings::default(), None).unwrap();
        assert_eq!(warm.draws - before, 123);
    }

    #[test]
    fn batch_draws_count_points() {
        let p = make_kl_dro(
            DroSpec::new(Arc::new(SquareLoss::new(2)), Arc::new(regression(30, 2, 4)), 2.0, 40.0).with_batch_size(8),
        )
        .unwrap();
        let cfg = CoverConfig {
            schedule: StepSchedule::Constant { eta: 0.05, a: 0.5 },
            iterations: 10,
            seed: 1,
            return_mode: ReturnMode::Last,
        };
        let (_, rec) = cover_run(&p, Start::Cold(ParamVector::zeros(2)), &cfg, &LogSettings::every(1), None).unwrap();
        assert_eq!(rec.last().unwrap().samples_seen, 88);
    }

    #[test]
    fn single_step_last_mode() {
        let p = dro(20, 2, 6, Regularizer::Zero);
        let cfg = CoverConfig {
            schedule: StepSchedule::Constant { eta: 0.1, a: 0.5 },
            iterations: 1,
            seed: 3,
            return_mode: ReturnMode::Last,
        };
        let (s, _) = cover_run(&p, Start::Cold(ParamVector::zeros(2)), &cfg, &LogSettings::default(), None).unwrap();
        let manual = cover_step(cover_init(&p, ParamVector::zeros(2), 3).unwrap(), &p, 0.1, 0.5).unwrap();
        assert_eq!(s.w, manual.w);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn zero_iterations_rejected() {
        let p = dro(20, 2, 6, Regularizer::Zero);
        let cfg = CoverConfig {
            schedule: StepSchedule::Constant { eta: 0.1, a: 0.5 },
            iterations: 0,
            seed: 3,
            return_mode: ReturnMode::Last,
        };
        let r = cover_run(&p, Start::Cold(ParamVector::zeros(2)), &cfg, &LogSettings::default(), None);
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let p = erm(20, 2, 7);
        let cfg = CoverConfig {
            schedule: StepSchedule::Constant { eta: 50.0, a: 1.0 },
            iterations: 1000,
            seed: 3,
            return_mode: ReturnMode::Last,
        };
        let r = cover_run(&p, Start::Cold(ParamVector::new(vec![1.0, 1.0])), &cfg, &LogSettings::default(), None);
        assert!(matches!(r, Err(Error::Diverged { .. }) | Err(Error::NonFiniteIterate { .. })));
    }

    #[test]
    fn uniform_mode_returns_a_visited_iterate() {
        let p = dro(20, 2, 8, Regularizer::Zero);
        let cfg = CoverConfig {
            schedule: StepSchedule::Constant { eta: 0.05, a: 0.3 },
            iterations: 50,
            seed: 21,
            return_mode: ReturnMode::UniformRandom,
        };
        let (s, _) = cover_run(&p, Start::Cold(ParamVector::zeros(2)), &cfg, &LogSettings::default(), None).unwrap();
        let mut replay = cover_init(&p, ParamVector::zeros(2), 21).unwrap();
        let mut found = false;
        for _ in 0..50 {
            replay = cover_step(replay, &p, 0.05, 0.3).unwrap();
            if replay.w == s.w {
                assert_eq!(replay.u, s.u);
                assert_eq!(replay.t, s.t);
                found = true;
            }
        }
        assert!(found);
        assert_eq!(s.draws, 51);
    }

    #[test]
    fn momentum_matches_manual_recursion() {
        let p = dro(25, 3, 9, Regularizer::Zero);
        let s0 = cover_init(&p, ParamVector::new(vec![0.1, 0.1, 0.1]), 2).unwrap();
        let mut rng = s0.rng.clone();
        let s1 = cover_step(s0.clone(), &p, 0.07, 0.4).unwrap();
        let d = s0.v.as_slice().iter().map(|x| x * p.lambda() / s0.u[0]).collect::<Vec<_>>();
        let w1: Vec<f64> = s0.w.iter().zip(&d).map(|(w, g)| w - 0.07 * g).collect();
        assert!(max_abs_diff(&s1.w, &w1) < 1e-15);
        let z: Sample = p.sample(&mut rng).unwrap();
        let u_ref = p.inner_value(&w1, &z).unwrap()[0] + 0.6 * (s0.u[0] - p.inner_value(&s0.w, &z).unwrap()[0]);
        assert!((s1.u[0] - u_ref).abs() < 1e-15);
    }

    #[test]
    fn floor_is_applied_and_counted() {
        let p = dro(20, 2, 10, Regularizer::Zero);
        let mut s = cover_init(&p, ParamVector::zeros(2), 1).unwrap();
        s.u[0] = -1.0;
        let s = cover_step(s, &p, 0.01, 0.5).unwrap();
        assert_eq!(s.clamp_count, 1);
        assert!(s.w.is_finite());
    }
}
