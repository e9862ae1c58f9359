//! Full-batch ground truth: exact gradients, gradient mapping, F* estimation,
//! finite-difference checks and empirical PL constants.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, norm_sq, ParamVector};
use crate::problem::{CompositionalProblem, SeededRng};
use crate::regularizer::Regularizer;

/// `grad g(w)^T grad f(g(w))`, the gradient of the smooth part `f(g(w))`.
pub fn smooth_gradient(w: &[f64], problem: &dyn CompositionalProblem) -> Result<ParamVector> {
    let (u, jac) = problem.exact_inner_eval(w)?;
    crate::problem::composite_grad_estimate(&u, &jac, problem)
}

/// `f(g(w))` plus the reporting offset, without the regularizer.
pub fn smooth_value(w: &[f64], problem: &dyn CompositionalProblem) -> Result<f64> {
    let u = problem.exact_inner(w)?;
    Ok(problem.outer_value(&u)? + problem.objective_offset())
}

/// Exact `grad F(w)` including a smooth regularizer.
pub fn full_gradient(w: &[f64], problem: &dyn CompositionalProblem) -> Result<ParamVector> {
    let mut g = smooth_gradient(w, problem)?;
    let r = problem.regularizer();
    if !matches!(r, Regularizer::Zero) {
        axpy(1.0, &r.grad(w)?, &mut g);
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientMapping {
    pub vector: ParamVector,
    pub eta: f64,
}

impl GradientMapping {
    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.vector)
    }
}

/// `(w - prox^eta_r(w - eta grad (f o g)(w))) / eta`; exactly the full
/// gradient when `r = 0`.
pub fn gradient_mapping(
    w: &[f64],
    problem: &dyn CompositionalProblem,
    eta: f64,
) -> Result<GradientMapping> {
    if !(eta > 0.0) {
        return Err(Error::Argument(format!("gradient mapping needs eta > 0, got {eta}")));
    }
    let d = smooth_gradient(w, problem)?;
    if matches!(problem.regularizer(), Regularizer::Zero) {
        return Ok(GradientMapping { vector: d, eta });
    }
    let moved = ParamVector::new(w.to_vec()).step(eta, &d)?;
    let p = problem.prox(eta, &moved);
    let vector = w.iter().zip(p.iter()).map(|(a, b)| (a - b) / eta).collect();
    Ok(GradientMapping {
        vector: ParamVector::new(vector),
        eta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FStarOptions {
    pub max_iters: u64,
    /// Stop once `|G_eta(w)| <= tol`.
    pub tol: f64,
    /// Give up after this many iterations without a new best objective.
    pub stall_iters: u64,
    pub initial_step: f64,
}

impl Default for FStarOptions {
    fn default() -> Self {
        Self {
            max_iters: 1_000_000,
            tol: 1e-10,
            stall_iters: 10_000,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FStarEstimate {
    pub value: f64,
    pub w: ParamVector,
    pub iterations: u64,
    pub grad_mapping_norm: f64,
    /// The tolerance was met before `max_iters`.
    pub converged: bool,
    /// The problem is not known to be convex, so the value may be a local minimum.
    pub local_only: bool,
}

/// Full-batch proximal gradient descent with backtracking.
pub fn estimate_f_star(
    problem: &dyn CompositionalProblem,
    w_init: &[f64],
    opts: &FStarOptions,
) -> Result<FStarEstimate> {
    let r = problem.regularizer();
    let mut w = problem.prox(opts.initial_step, w_init);
    let mut s = smooth_value(&w, problem)?;
    let mut eta = opts.initial_step;
    let mut best = s + r.value(&w);
    let mut since_best = 0u64;
    let mut gnorm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let g = smooth_gradient(&w, problem)?;
        // backtracking on the quadratic upper model of the smooth part
        let (w_next, s_next) = loop {
            let cand = problem.prox(eta, &ParamVector::new(w.to_vec()).step(eta, &g)?);
            let diff: Vec<f64> = cand.iter().zip(w.iter()).map(|(a, b)| a - b).collect();
            let sc = smooth_value(&cand, problem)?;
            if sc.is_finite() && sc <= s + dot(&g, &diff) + norm_sq(&diff) / (2.0 * eta) + 1e-15 * s.abs() {
                break (cand, sc);
            }
            eta *= 0.5;
            if eta < 1e-300 {
                return Err(Error::Numeric("backtracking step size underflowed".into()));
            }
        };
        gnorm = w.iter().zip(w_next.iter()).map(|(a, b)| (a - b) / eta).map(|x| x * x).sum::<f64>().sqrt();
        w = w_next;
        s = s_next;
        iterations += 1;
        let f = s + r.value(&w);
        if f < best {
            best = f;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if gnorm <= opts.tol {
            break;
        }
        if since_best >= opts.stall_iters {
            return Err(Error::Stalled {
                iterations,
                best,
            });
        }
        eta *= 1.25;
    }
    let value = s + r.value(&w);
    Ok(FStarEstimate {
        value,
        w,
        iterations,
        grad_mapping_norm: gnorm,
        converged: gnorm <= opts.tol,
        local_only: !problem.is_convex(),
    })
}

/// Best of several [`estimate_f_star`] runs; starts that stall contribute
/// their best value.
pub fn estimate_f_star_multistart(
    problem: &dyn CompositionalProblem,
    starts: &[ParamVector],
    opts: &FStarOptions,
) -> Result<FStarEstimate> {
    let mut best: Option<FStarEstimate> = None;
    let mut stalled_best = f64::INFINITY;
    for w0 in starts {
        match estimate_f_star(problem, w0, opts) {
            Ok(est) => {
                if best.as_ref().is_none_or(|b| est.value < b.value) {
                    best = Some(est);
                }
            }
            Err(Error::Stalled { best: v, .. }) => stalled_best = stalled_best.min(v),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some(b) if b.value <= stalled_best => Ok(b),
        _ if stalled_best.is_finite() => Err(Error::Stalled {
            iterations: opts.stall_iters,
            best: stalled_best,
        }),
        Some(b) => Ok(b),
        None => Err(Error::Argument("no starting points".into())),
    }
}

/// Max over coordinates of `|fd - analytic| / max(|analytic|, 1e-8)` using
/// central differences with step `h`.
pub fn fd_check<V, G>(value_fn: V, grad_fn: G, w: &[f64], h: f64) -> f64
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let g = grad_fn(w);
    let mut wp = w.to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..w.len() {
        wp[j] = w[j] + h;
        let fp = value_fn(&wp);
        wp[j] = w[j] - h;
        let fm = value_fn(&wp);
        wp[j] = w[j];
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - g[j]).abs() / g[j].abs().max(1e-8));
    }
    worst
}

/// Where [`estimate_pl`] draws its parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum PlSampler {
    Points(Vec<ParamVector>),
    /// `center + radius * N(0, I) / sqrt(d)`.
    GaussianBall { center: ParamVector, radius: f64 },
    /// Gaussian balls around the iterates of full-batch gradient descent.
    Trajectory {
        start: ParamVector,
        eta: f64,
        steps: usize,
        radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlEstimate {
    pub mu_hat: f64,
    pub num_points: usize,
    pub f_star_used: f64,
}

fn ball_point(center: &[f64], radius: f64, rng: &mut SeededRng) -> ParamVector {
    let scale = radius / (center.len() as f64).sqrt();
    ParamVector::new(
        center
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(rng);
                c + scale * z
            })
            .collect(),
    )
}

/// `min |grad F(w)|^2 / (2 (F(w) - F*))` over sampled points, skipping
/// points with `F(w) - F* < 1e-12`.
pub fn estimate_pl(
    problem: &dyn CompositionalProblem,
    f_star: f64,
    sampler: &PlSampler,
    num_points: usize,
    seed: u64,
) -> Result<PlEstimate> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let points: Vec<ParamVector> = match sampler {
        PlSampler::Points(p) => p.clone(),
        PlSampler::GaussianBall { center, radius } => {
            (0..num_points).map(|_| ball_point(center, *radius, &mut rng)).collect()
        }
        PlSampler::Trajectory {
            start,
            eta,
            steps,
            radius,
        } => {
            let mut path = vec![start.clone()];
            let mut w = start.clone();
            for _ in 0..*steps {
                let g = full_gradient(&w, problem)?;
                w = w.step(*eta, &g)?;
                path.push(w.clone());
            }
            (0..num_points)
                .map(|i| ball_point(&path[i % path.len()], *radius, &mut rng))
                .collect()
        }
    };
    let mut mu_hat = f64::INFINITY;
    let mut used = 0;
    for w in &points {
        let gap = problem.exact_objective(w)? - f_star;
        if gap < 1e-12 {
            continue;
        }
        let g = full_gradient(w, problem)?;
        mu_hat = mu_hat.min(norm_sq(&g) / (2.0 * gap));
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate("every sampled point is already optimal".into()));
    }
    Ok(PlEstimate {
        mu_hat,
        num_points: used,
        f_star_used: f_star,
    })
}

/// Euclidean distance between two vectors.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dro::{dro_grad_exact, make_kl_dro, DroSpec};
    use crate::models::{make_regression_dataset, DataPoint, Dataset, RegressionSpec, SquareLoss};
    use crate::problem::ErmProblem;
    use std::sync::Arc;

    fn axis_erm(r: Regularizer) -> ErmProblem {
        // H = (2/n) diag(sum x_j^2) = diag(1, 4) for n = 4
        let pts = vec![
            DataPoint::new(vec![1.0, 0.0], 1.0),
            DataPoint::new(vec![-1.0, 0.0], 1.0),
            DataPoint::new(vec![0.0, 2.0], 2.0),
            DataPoint::new(vec![0.0, -2.0], 0.0),
        ];
        ErmProblem::new(Arc::new(SquareLoss::new(2)), Arc::new(Dataset::new(pts)), r)
    }

    // F(w) = 0.5 w1^2 + 2 w2^2 - 2 w2 + 3/2: minimizer (0, 1/2), value 1
    fn axis_fstar() -> (f64, [f64; 2]) {
        (1.0, [0.0, 0.5])
    }

    fn dro_problem(lambda: f64, seed: u64) -> crate::dro::KlDroProblem {
        let data = make_regression_dataset(&RegressionSpec {
            n: 40,
            dim: 3,
            feature_scale: 1.0,
            weight_scale: 1.0,
            noise: 0.2,
            y_clip: 3.0,
            seed,
        })
        .unwrap();
        make_kl_dro(DroSpec::new(Arc::new(SquareLoss::new(3)), Arc::new(data.data), lambda, 40.0)).unwrap()
    }

    #[test]
    fn full_gradient_matches_softmax_formula() {
        for seed in 0..5 {
            let p = dro_problem(0.5 + seed as f64, seed);
            let w = [0.3, -0.1, 0.2];
            let a = full_gradient(&w, &p).unwrap();
            let b = dro_grad_exact(&w, p.spec()).unwrap();
            assert!(crate::linalg::max_abs_diff(&a, &b) <= 1e-12);
        }
    }

    #[test]
    fn full_gradient_of_erm() {
        let p = axis_erm(Regularizer::Zero);
        let w = [0.5, 0.5];
        let mut expect = vec![0.0; 2];
        for z in &p.data.points {
            let r = dot(&w, &z.x) - z.y;
            axpy(2.0 * r / 4.0, &z.x, &mut expect);
        }
        assert!(crate::linalg::max_abs_diff(&full_gradient(&w, &p).unwrap(), &expect) < 1e-15);
    }

    #[test]
    fn mapping_without_regularizer_is_gradient() {
        let p = dro_problem(2.0, 1);
        let w = [0.1, 0.2, 0.3];
        let g = full_gradient(&w, &p).unwrap();
        let m1 = gradient_mapping(&w, &p, 0.1).unwrap();
        let m2 = gradient_mapping(&w, &p, 7.0).unwrap();
        assert_eq!(m1.vector, g);
        assert_eq!(m2.vector, g);
    }

    #[test]
    fn mapping_vanishes_at_constrained_optimum() {
        // unconstrained minimizer (0, 1/2) lies outside the box |w| <= 0.1,
        // the constrained one is (0, 0.1) by separability
        let p = axis_erm(Regularizer::linf_ball(0.1));
        let m = gradient_mapping(&[0.0, 0.1], &p, 0.05).unwrap();
        assert!(norm(&m.vector) < 1e-10);
        let off = gradient_mapping(&[0.05, 0.1], &p, 0.05).unwrap();
        assert!(norm(&off.vector) > 1e-3);
    }

    #[test]
    fn f_star_of_quadratic() {
        let p = axis_erm(Regularizer::Zero);
        let (f, w) = axis_fstar();
        let est = estimate_f_star(&p, &[3.0, -2.0], &FStarOptions::default()).unwrap();
        assert!(est.converged && !est.local_only);
        assert!((est.value - f).abs() < 1e-10);
        assert!(distance(&est.w, &w) < 1e-9);
        let loose = estimate_f_star(
            &p,
            &[3.0, -2.0],
            &FStarOptions {
                tol: 1e-9,
                ..FStarOptions::default()
            },
        )
        .unwrap();
        assert!((loose.value - est.value).abs() <= 1e-6);
    }

    #[test]
    fn f_star_of_large_lambda_dro_is_least_squares() {
        let p = dro_problem(1e6, 3);
        // closed-form least squares through the normal equations
        let d = 3;
        let mut a = vec![vec![0.0; d + 1]; d];
        for z in &p.spec().data.points {
            for i in 0..d {
                for j in 0..d {
                    a[i][j] += z.x[i] * z.x[j];
                }
                a[i][d] += z.x[i] * z.y;
            }
        }
        for c in 0..d {
            let piv = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..d {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    let row_c = a[c].clone();
                    for (x, y) in a[r].iter_mut().zip(&row_c) {
                        *x -= f * y;
                    }
                }
            }
        }
        let w_ls: Vec<f64> = (0..d).map(|i| a[i][d] / a[i][i]).collect();
        let erm: f64 = p.spec().losses(&w_ls).iter().sum::<f64>() / 40.0;
        let est = estimate_f_star(&p, &[0.0; 3], &FStarOptions::default()).unwrap();
        let dro_at_ls = p.exact_objective(&w_ls).unwrap();
        // the DRO optimum sits between ERM's optimum and DRO's value there
        assert!(est.value <= dro_at_ls + 1e-12);
        assert!((est.value - erm).abs() < 1e-5);
    }

    #[test]
    fn fd_check_controls() {
        let value = |w: &[f64]| w[0] * w[0] + 3.0 * w[0] * w[1];
        let grad = |w: &[f64]| vec![2.0 * w[0] + 3.0 * w[1], 3.0 * w[0]];
        assert!(fd_check(value, grad, &[0.7, -1.2], 1e-5) <= 1e-9);
        let wrong = |w: &[f64]| grad(w).into_iter().map(|g| 2.0 * g).collect::<Vec<_>>();
        let e = fd_check(value, wrong, &[0.7, -1.2], 1e-5);
        assert!((e - 0.5).abs() < 1e-6);
    }

    #[test]
    fn fd_check_on_dro_objective() {
        let p = dro_problem(1.5, 8);
        let e = fd_check(
            |w| p.exact_objective(w).unwrap(),
            |w| full_gradient(w, &p).unwrap().into_inner(),
            &[0.4, -0.3, 0.2],
            1e-5,
        );
        assert!(e <= 1e-5);
    }

    #[test]
    fn pl_of_quadratic_brackets_eigenvalues() {
        let p = axis_erm(Regularizer::Zero);
        let (f, w) = axis_fstar();
        let est = estimate_pl(
            &p,
            f,
            &PlSampler::GaussianBall {
                center: ParamVector::new(w.to_vec()),
                radius: 1.0,
            },
            10_000,
            4,
        )
        .unwrap();
        assert!(est.mu_hat >= 1.0 * (1.0 - 1e-6) && est.mu_hat <= 4.0);
        assert!(est.mu_hat <= 1.01);
        let worse = estimate_pl(
            &p,
            f - 1.0,
            &PlSampler::GaussianBall {
                center: ParamVector::new(w.to_vec()),
                radius: 1.0,
            },
            10_000,
            4,
        )
        .unwrap();
        assert!(worse.mu_hat < est.mu_hat);
    }

    #[test]
    fn pl_of_dro_is_positive() {
        let p = dro_problem(5.0, 2);
        let f = estimate_f_star(&p, &[0.0; 3], &FStarOptions::default()).unwrap();
        let est = estimate_pl(
            &p,
            f.value,
            &PlSampler::Trajectory {
                start: ParamVector::new(vec![2.0, -2.0, 1.0]),
                eta: 0.05,
                steps: 50,
                radius: 0.5,
            },
            500,
            1,
        )
        .unwrap();
        assert!(est.mu_hat > 0.0);
    }

    #[test]
    fn pl_all_optimal_is_degenerate() {
        let p = axis_erm(Regularizer::Zero);
        let (f, w) = axis_fstar();
        let r = estimate_pl(&p, f, &PlSampler::Points(vec![ParamVector::new(w.to_vec())]), 1, 0);
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }
}
