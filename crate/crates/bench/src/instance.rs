//! Materializes a cell and seed into data, model and problem.

use std::sync::{Arc, OnceLock};

use dro_core::dro::{make_kl_dro, DroSpec, KlDroProblem, SquareDroBounds};
use dro_core::models::{
    make_imbalanced_split, make_regression_dataset, Dataset, ImbalancedSpec, LossModel, Mlp,
    RegressionSpec, SquareLoss, DEFAULT_LOSS_CAP,
};
use dro_core::oracle::{estimate_f_star, FStarOptions};
use dro_core::{ErmProblem, ParamVector, ProblemConstants, Regularizer};

use crate::config::{Cell, DataConfig, ModelKind, RegularizerConfig};
use crate::error::{BenchError, Result};

const DEFAULT_HIDDEN: usize = 32;

pub struct Instance {
    pub model: Arc<dyn LossModel>,
    pub train: Arc<Dataset>,
    pub test: Option<Arc<Dataset>>,
    /// DRO problem description; ERM methods use its model, data and regularizer.
    pub spec: DroSpec,
    /// Analytic bounds, available for the square loss with a derived loss bound.
    pub bounds: Option<SquareDroBounds>,
    pub w0: ParamVector,
    /// Report per-class mean recall instead of plain accuracy.
    pub balanced: bool,
    gap: OnceLock<f64>,
}

fn regularizer(cfg: RegularizerConfig) -> Regularizer {
    match cfg {
        RegularizerConfig::None => Regularizer::Zero,
        RegularizerConfig::Ridge { gamma } => Regularizer::Ridge { gamma },
        RegularizerConfig::L1 { weight } => Regularizer::L1 { weight },
        RegularizerConfig::Box { radius } => Regularizer::linf_ball(radius),
    }
}

fn max_over<F: Fn(&[f64]) -> f64>(data: &Dataset, f: F) -> f64 {
    data.points.iter().map(|p| f(&p.x)).fold(0.0, f64::max)
}

impl Instance {
    /// Data, initial point and problem of `cell` under run seed `seed`.
    pub fn build(cell: &Cell, seed: u64) -> Result<Self> {
        let p = &cell.problem;
        let reg = regularizer(p.regularizer);
        match cell.data {
            DataConfig::Regression {
                n,
                dim,
                feature_scale,
                weight_scale,
                noise,
                y_clip,
                seed: data_seed,
            } => {
                let data = make_regression_dataset(&RegressionSpec {
                    n,
                    dim,
                    feature_scale,
                    weight_scale,
                    noise,
                    y_clip,
                    seed: data_seed.unwrap_or(seed),
                })?
                .data;
                let model: Arc<dyn LossModel> = Arc::new(SquareLoss::new(dim));
                let train = Arc::new(data);
                let w0 = ParamVector::zeros(dim);
                let bounds = square_bounds(cell, &model, &train, reg, &w0)?;
                let loss_max = match (p.loss_max, bounds) {
                    (Some(m), _) => m,
                    (None, Some(b)) => b.loss_max(),
                    (None, None) => {
                        return Err(BenchError::Config(
                            "problem.loss_max is required for this regularizer".into(),
                        ))
                    }
                };
                let spec = DroSpec::new(model.clone(), train.clone(), p.lambda, loss_max)
                    .with_regularizer(reg)
                    .with_batch_size(p.batch_size);
                spec.validate()?;
                Ok(Self {
                    model,
                    train,
                    test: None,
                    spec,
                    bounds: if p.loss_max.is_none() { bounds } else { None },
                    w0,
                    balanced: false,
                    gap: OnceLock::new(),
                })
            }
            DataConfig::Imbalanced {
                num_classes,
                per_class_majority,
                imratio,
                feature_dim,
                class_separation,
                test_fraction,
                seed: data_seed,
            } => {
                let split = make_imbalanced_split(
                    &ImbalancedSpec {
                        num_classes,
                        per_class_majority,
                        imratio,
                        feature_dim,
                        class_separation,
                        seed: data_seed.unwrap_or(seed),
                    },
                    test_fraction,
                )?;
                let cap = p.loss_cap.unwrap_or(DEFAULT_LOSS_CAP);
                let mlp = Mlp::new(feature_dim, p.hidden.unwrap_or(DEFAULT_HIDDEN), num_classes)
                    .with_cap(Some(cap));
                let w0 = mlp.init_params(seed);
                let model: Arc<dyn LossModel> = Arc::new(mlp);
                let train = Arc::new(split.train);
                let spec = DroSpec::new(model.clone(), train.clone(), p.lambda, p.loss_max.unwrap_or(cap))
                    .with_regularizer(reg)
                    .with_batch_size(p.batch_size);
                spec.validate()?;
                Ok(Self {
                    model,
                    train,
                    test: Some(Arc::new(split.test)),
                    spec,
                    bounds: None,
                    w0,
                    balanced: true,
                    gap: OnceLock::new(),
                })
            }
        }
    }

    pub fn dro(&self) -> Result<KlDroProblem> {
        Ok(make_kl_dro(self.spec.clone())?)
    }

    pub fn erm(&self) -> ErmProblem {
        ErmProblem::new(self.model.clone(), self.train.clone(), self.spec.regularizer)
            .with_batch_size(self.spec.batch_size)
    }

    /// Constants for the theory-driven schedules. `F(w0) - F*` is estimated
    /// only when `need_gap` is set and no value is configured.
    pub fn constants(&self, cell: &Cell, need_gap: bool) -> Result<ProblemConstants> {
        let k = cell.problem.constants;
        let mu = k.mu.unwrap_or(match (cell.problem.model, self.spec.regularizer) {
            (ModelKind::Square, Regularizer::Ridge { gamma }) => gamma,
            _ => 0.0,
        });
        let delta_f = match k.delta_f {
            Some(d) => d,
            None if need_gap => self.initial_gap()?,
            // only the stage plan reads the gap
            None => 1.0,
        };
        let constants = match (k.l_agg, k.sigma, self.bounds) {
            (Some(l), Some(s), _) => ProblemConstants::from_aggregate(l, s, mu, delta_f)?,
            (None, None, Some(b)) => b.constants(mu, delta_f)?,
            _ => {
                return Err(BenchError::Config(
                    "this problem has no analytic constants; set constants.l_agg and constants.sigma".into(),
                ))
            }
        };
        Ok(constants)
    }

    /// `F(w0) - F*` with `F*` from full-batch proximal gradient descent;
    /// computed once per instance.
    pub fn initial_gap(&self) -> Result<f64> {
        if let Some(&gap) = self.gap.get() {
            return Ok(gap);
        }
        let problem = self.dro()?;
        let f0 = dro_core::CompositionalProblem::exact_objective(&problem, &self.w0)?;
        let f_star = estimate_f_star(&problem, &self.w0, &FStarOptions::default())?.value;
        let gap = f0 - f_star;
        if gap > 0.0 {
            Ok(*self.gap.get_or_init(|| gap))
        } else {
            Err(BenchError::Config(format!(
                "initial gap {gap:e} is not positive; set constants.delta_f"
            )))
        }
    }

    /// Words of state kept by the named method.
    pub fn memory_words(&self, algorithm_id: &str) -> u64 {
        let d = self.model.param_dim();
        match algorithm_id {
            "cover" | "recover" => dro_core::optimizers::cover_memory_words(d, 1),
            "stoc_agda" => dro_core::baselines::agda_memory_words(d, self.train.len()),
            "ascpg" => d as u64 + 1,
            _ => d as u64,
        }
    }
}

/// Residual bound on the feasible region: the box itself, or a multiple of
/// the ridge sublevel ball `|w| <= sqrt(2 F(w0) / gamma)`.
fn square_bounds(
    cell: &Cell,
    model: &Arc<dyn LossModel>,
    train: &Arc<Dataset>,
    reg: Regularizer,
    w0: &ParamVector,
) -> Result<Option<SquareDroBounds>> {
    let p = &cell.problem;
    let y_max = train.points.iter().map(|z| z.y.abs()).fold(0.0, f64::max);
    let x_norm = max_over(train, |x| x.iter().map(|v| v * v).sum::<f64>().sqrt());
    match reg {
        Regularizer::Box { lo, hi } => {
            let radius = lo.abs().max(hi.abs());
            let x_l1 = max_over(train, |x| x.iter().map(|v| v.abs()).sum());
            Ok(Some(SquareDroBounds::on_box(p.lambda, x_norm, x_l1, radius, y_max)))
        }
        Regularizer::Ridge { gamma } if gamma > 0.0 => {
            // the shift does not change the objective value, only its stability
            let probe_max = dro_core::linalg::dot(w0, w0).mul_add(x_norm * x_norm, y_max * y_max).max(1.0);
            let probe = make_kl_dro(
                DroSpec::new(model.clone(), train.clone(), p.lambda, probe_max).with_regularizer(reg),
            )?;
            let f0 = dro_core::CompositionalProblem::exact_objective(&probe, w0)?;
            let radius = p.sublevel_slack * (2.0 * f0 / gamma).sqrt();
            Ok(Some(SquareDroBounds {
                lambda: p.lambda,
                feature_norm: x_norm,
                residual_bound: radius * x_norm + y_max,
            }))
        }
        _ => Ok(None),
    }
}
