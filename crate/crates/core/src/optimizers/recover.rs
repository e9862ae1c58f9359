//! RECOVER: COVER restarted in stages with constant per-stage step sizes,
//! warm-starting `(w, u, v)` across stages.

use super::cover::{cover_init, cover_run_recorded, CoverConfig, CoverState, ReturnMode, Start};
use super::schedule::{stage_plan, InitialGapVariant, PracticalSchedule, StagePlan, StepSchedule};
use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::problem::{CompositionalProblem, DatasetSize, ProblemConstants};
use crate::record::{LogSettings, Monitor, Recorder, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecoverScheduler {
    /// Stage plan computed from analytic constants.
    Theoretical {
        constants: ProblemConstants,
        c: f64,
        variant: InitialGapVariant,
    },
    Practical(PracticalSchedule),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoverConfig {
    pub scheduler: RecoverScheduler,
    pub num_stages: usize,
    pub seed: u64,
    pub return_mode: ReturnMode,
    /// Upper bound on the samples the whole plan may consume.
    pub sample_budget: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub plan: StagePlan,
    /// The state handed to the next stage.
    pub state: CoverState,
}

#[derive(Debug, Clone)]
pub struct RecoverOutput {
    pub w: ParamVector,
    pub stages: Vec<StageOutput>,
    /// Total sample draws, including the initialization draw.
    pub draws: u64,
}

/// The per-stage hyperparameters `config` prescribes for `problem`.
pub fn plan_stages(problem: &dyn CompositionalProblem, config: &RecoverConfig) -> Result<Vec<StagePlan>> {
    if config.num_stages == 0 {
        return Err(Error::Argument("RECOVER needs at least one stage".into()));
    }
    let plans = (1..=config.num_stages)
        .map(|k| match &config.scheduler {
            RecoverScheduler::Theoretical {
                constants,
                c,
                variant,
            } => stage_plan(k, constants, *c, *variant),
            RecoverScheduler::Practical(p) => {
                p.validate()?;
                let n = match problem.dataset_size() {
                    DatasetSize::Finite(n) => n,
                    DatasetSize::Streaming => {
                        return Err(Error::Configuration("epoch-based stages need a finite dataset".into()))
                    }
                };
                Ok(p.stage(k, n, problem.batch_size()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(budget) = config.sample_budget {
        let b = problem.batch_size() as u64;
        let mut draws = 1u64;
        for p in &plans {
            draws = draws.saturating_add(p.t);
            let needed = draws.saturating_mul(b);
            if needed > budget {
                return Err(Error::BudgetExceeded {
                    stage: p.stage,
                    needed,
                    budget,
                });
            }
        }
    }
    Ok(plans)
}

pub fn recover_run_recorded(
    problem: &dyn CompositionalProblem,
    w0: ParamVector,
    config: &RecoverConfig,
    recorder: &mut Recorder<'_>,
) -> Result<RecoverOutput> {
    let plans = plan_stages(problem, config)?;
    let mut state = cover_init(problem, w0, config.seed)?;
    let mut stages = Vec::with_capacity(plans.len());
    for plan in plans {
        if recorder.out_of_budget(state.draws * problem.batch_size() as u64) {
            break;
        }
        let cover = CoverConfig {
            schedule: StepSchedule::Constant {
                eta: plan.eta,
                a: plan.a,
            },
            iterations: plan.t,
            seed: config.seed.wrapping_add(plan.stage as u64 - 1),
            return_mode: config.return_mode,
        };
        state = cover_run_recorded(problem, Start::Warm(state), &cover, recorder, plan.stage)?;
        stages.push(StageOutput {
            plan,
            state: state.clone(),
        });
    }
    Ok(RecoverOutput {
        w: state.w.clone(),
        draws: state.draws,
        stages,
    })
}

pub fn recover_run(
    problem: &dyn CompositionalProblem,
    w0: ParamVector,
    config: &RecoverConfig,
    log: &LogSettings,
    monitor: Option<&dyn Monitor>,
) -> Result<(RecoverOutput, RunRecord)> {
    let mut recorder = Recorder::new(*log, monitor);
    let out = recover_run_recorded(problem, w0, config, &mut recorder)?;
    Ok((out, recorder.finish()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dro::{make_kl_dro, DroSpec, KlDroProblem};
    use crate::models::{make_regression_dataset, RegressionSpec, SquareLoss};
    use crate::optimizers::cover_run;
    use crate::regularizer::Regularizer;
    use std::sync::Arc;

    fn problem() -> KlDroProblem {
        let data = make_regression_dataset(&RegressionSpec {
            n: 60,
            dim: 3,
            feature_scale: 1.0,
            weight_scale: 1.0,
            noise: 0.1,
            y_clip: 3.0,
            seed: 5,
        })
        .unwrap();
        make_kl_dro(
            DroSpec::new(Arc::new(SquareLoss::new(3)), Arc::new(data.data), 2.0, 40.0)
                .with_regularizer(Regularizer::Ridge { gamma: 0.1 }),
        )
        .unwrap()
    }

    fn practical(stages: usize) -> RecoverConfig {
        RecoverConfig {
            scheduler: RecoverScheduler::Practical(PracticalSchedule {
                eta0: 0.1,
                a0: 0.5,
                decay: 10.0,
                epochs_per_stage: 1.0,
            }),
            num_stages: stages,
            seed: 17,
            return_mode: ReturnMode::Last,
            sample_budget: None,
        }
    }

    #[test]
    fn one_stage_equals_warm_cover() {
        let p = problem();
        let w0 = ParamVector::new(vec![0.5, 0.5, 0.5]);
        let cfg = practical(1);
        let (out, _) = recover_run(&p, w0.clone(), &cfg, &LogSettings::default(), None).unwrap();
        let init = cover_init(&p, w0, 17).unwrap();
        let plan = plan_stages(&p, &cfg).unwrap()[0];
        let cover = CoverConfig {
            schedule: StepSchedule::Constant { eta: plan.eta, a: plan.a },
            iterations: plan.t,
            seed: 17,
            return_mode: ReturnMode::Last,
        };
        let (s, _) = cover_run(&p, Start::Warm(init), &cover, &LogSettings::default(), None).unwrap();
        assert_eq!(out.w, s.w);
        assert_eq!(out.stages[0].state.u, s.u);
    }

    #[test]
    fn draws_are_one_plus_stage_lengths() {
        let p = problem();
        let cfg = practical(3);
        let plans = plan_stages(&p, &cfg).unwrap();
        let (out, rec) = recover_run(&p, ParamVector::zeros(3), &cfg, &LogSettings::every(7), None).unwrap();
        assert_eq!(out.draws, 1 + plans.iter().map(|p| p.t).sum::<u64>());
        let stages: Vec<usize> = rec.rows.iter().map(|r| r.stage).collect();
        assert!(stages.windows(2).all(|w| w[0] <= w[1]));
        assert!(rec.rows.windows(2).all(|w| w[0].samples_seen < w[1].samples_seen));
        assert_eq!(rec.last().unwrap().samples_seen, out.draws);
    }

    #[test]
    fn budget_overflow_names_the_stage() {
        let p = problem();
        let mut cfg = practical(3);
        cfg.sample_budget = Some(100);
        // 60 draws per stage plus the initial one
        match plan_stages(&p, &cfg) {
            Err(Error::BudgetExceeded { stage, needed, budget }) => {
                assert_eq!((stage, needed, budget), (2, 121, 100));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn theoretical_plan_needs_mu() {
        let p = problem();
        let mut cfg = practical(2);
        let k = ProblemConstants::from_aggregate(10.0, 1.0, 0.0, 1.0).unwrap();
        cfg.scheduler = RecoverScheduler::Theoretical {
            constants: k,
            c: 104.0 * 100.0,
            variant: InitialGapVariant::Theorem,
        };
        assert!(matches!(plan_stages(&p, &cfg), Err(Error::Configuration(_))));
    }

    #[test]
    fn zero_stages_rejected() {
        assert!(plan_stages(&problem(), &practical(0)).is_err());
    }

    #[test]
    fn deterministic() {
        let p = problem();
        let cfg = practical(2);
        let (a, ra) = recover_run(&p, ParamVector::zeros(3), &cfg, &LogSettings::every(5), None).unwrap();
        let (b, rb) = recover_run(&p, ParamVector::zeros(3), &cfg, &LogSettings::every(5), None).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(ra.rows.len(), rb.rows.len());
    }
}
