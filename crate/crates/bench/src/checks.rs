//! Oracle and gradient checks on the problems a config describes.

use dro_core::oracle::{estimate_f_star_multistart, fd_check, smooth_gradient, smooth_value, FStarEstimate, FStarOptions};
use dro_core::{CompositionalProblem, ParamVector, SeededRng};
use rand::{Rng, SeedableRng};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::instance::Instance;

/// Central-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FStarReport {
    pub cell: String,
    pub estimate: FStarEstimate,
}

/// `F*` of every DRO cell on the first seed's data, best of `starts` starts.
pub fn fstar_report(config: &ExperimentConfig, starts: usize) -> Result<Vec<FStarReport>> {
    let seed = config.seeds[0];
    let mut out = Vec::new();
    for cell in config.cells().into_iter().filter(|c| c.algorithm.is_dro()) {
        let inst = Instance::build(&cell, seed)?;
        let problem = inst.dro()?;
        let points = perturbed(&inst.w0, starts.max(1), seed);
        let estimate = estimate_f_star_multistart(&problem, &points, &FStarOptions::default())?;
        out.push(FStarReport {
            cell: cell.label,
            estimate,
        });
    }
    Ok(out)
}

/// `w0` followed by `count - 1` Gaussian perturbations of it.
fn perturbed(w0: &ParamVector, count: usize, seed: u64) -> Vec<ParamVector> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let scale = w0.norm().max(1.0) / (w0.dim() as f64).sqrt();
    let mut points = vec![w0.clone()];
    for _ in 1..count {
        let w = w0.iter().map(|x| x + scale * (rng.random::<f64>() - 0.5)).collect();
        points.push(ParamVector::new(w));
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub cell: String,
    /// Worst relative error of the per-example loss gradients.
    pub loss_error: f64,
    /// Worst relative error of the smooth part of the objective.
    pub objective_error: f64,
}

impl GradientReport {
    pub fn worst(&self) -> f64 {
        self.loss_error.max(self.objective_error)
    }
}

/// Finite-difference checks at `points` random iterates near `w0`, for
/// every distinct problem of the config.
pub fn gradient_report(config: &ExperimentConfig, points: usize) -> Result<Vec<GradientReport>> {
    let seed = config.seeds[0];
    let mut out = Vec::new();
    let mut checked = Vec::new();
    for cell in config.cells() {
        let key = (cell.data.clone(), cell.problem.clone(), cell.algorithm.is_dro());
        if checked.contains(&key) {
            continue;
        }
        checked.push(key);
        let inst = Instance::build(&cell, seed)?;
        let dro = inst.dro()?;
        let erm = inst.erm();
        let problem: &dyn CompositionalProblem = if cell.algorithm.is_dro() { &dro } else { &erm };
        let mut loss_error: f64 = 0.0;
        let mut objective_error: f64 = 0.0;
        let mut rng = SeededRng::seed_from_u64(seed);
        for w in perturbed(&inst.w0, points.max(1) + 1, seed).into_iter().skip(1) {
            let w = problem.prox(1.0, &w);
            for _ in 0..4 {
                let z = &inst.train.points[rng.random_range(0..inst.train.len())];
                let e = fd_check(|v| inst.model.loss(v, z), |v| inst.model.grad(v, z), &w, FD_STEP);
                loss_error = loss_error.max(e);
            }
            let e = fd_check(
                |v| smooth_value(v, problem).unwrap_or(f64::NAN),
                |v| smooth_gradient(v, problem).map(ParamVector::into_inner).unwrap_or_default(),
                &w,
                FD_STEP,
            );
            objective_error = objective_error.max(e);
        }
        out.push(GradientReport {
            cell: cell.label,
            loss_error,
            objective_error,
        });
    }
    Ok(out)
}
