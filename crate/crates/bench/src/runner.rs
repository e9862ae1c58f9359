//! Executes the cells of an experiment over its seeds.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use dro_core::baselines::{
    ascpg_run, sgd_erm_run, stoc_agda_run, AgdaConfig, AscPgConfig, SgdConfig,
};
use dro_core::optimizers::{
    cover_run_recorded, default_stage_c, recover_run_recorded, CoverConfig, InitialGapVariant,
    MomentumConstant, OffsetTerm, PracticalSchedule, RecoverConfig, RecoverScheduler, ReturnMode,
    Start, StepSchedule, Theorem1Schedule,
};
use dro_core::record::{AccuracyEval, ProblemMonitor};
use dro_core::{CompositionalProblem, LogSettings, ParamVector, Recorder, RunRecord};
use serde::Serialize;

use crate::config::{
    AlgorithmConfig, Cell, CoverScheduleConfig, ExperimentConfig, GapVariantConfig, MomentumConfig,
    OffsetConfig, RecoverScheduleConfig, ReturnModeConfig,
};
use crate::error::{BenchError, Result};
use crate::instance::Instance;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum RunStatus {
    Clean,
    /// Stopped on the sample or wall-clock budget.
    Truncated,
    Diverged(String),
    Failed(String),
}

impl RunStatus {
    pub fn is_clean(&self) -> bool {
        *self == RunStatus::Clean
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub cell: String,
    pub seed: u64,
    pub status: RunStatus,
    pub record: RunRecord,
    pub csv: PathBuf,
    /// Final iterate, absent when the run failed.
    pub w: Option<ParamVector>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Concurrent runs; zero or one runs everything in order.
    pub workers: usize,
    /// Replaces the configured output directory.
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    experiment: &'a str,
    config_hash: &'a str,
    code_version: &'static str,
    cell: &'a str,
    algorithm: &'static str,
    seed: u64,
    #[serde(flatten)]
    status: &'a RunStatus,
    csv: String,
    rows: usize,
    samples_seen: Option<u64>,
    final_objective: Option<f64>,
    final_grad_mapping_norm_sq: Option<f64>,
    final_test_accuracy: Option<f64>,
}

fn return_mode(m: ReturnModeConfig) -> ReturnMode {
    match m {
        ReturnModeConfig::Last => ReturnMode::Last,
        ReturnModeConfig::UniformRandom => ReturnMode::UniformRandom,
    }
}

fn log_settings(config: &ExperimentConfig, memory_words: u64) -> LogSettings {
    LogSettings {
        log_every: config.log.every,
        max_samples: config.budget.max_samples,
        max_wallclock_s: config.budget.max_wallclock_s,
        memory_words,
    }
}

/// RECOVER settings of a `recover` cell.
pub fn recover_config(cell: &Cell, inst: &Instance, seed: u64) -> Result<RecoverConfig> {
    let AlgorithmConfig::Recover {
        num_stages,
        return_mode: rm,
        sample_budget,
        schedule,
        ..
    } = &cell.algorithm
    else {
        return Err(BenchError::Argument(format!("{} is not a RECOVER cell", cell.label)));
    };
    let scheduler = match *schedule {
        RecoverScheduleConfig::Practical {
            eta0,
            a0,
            decay,
            epochs_per_stage,
        } => RecoverScheduler::Practical(PracticalSchedule {
            eta0,
            a0,
            decay,
            epochs_per_stage,
        }),
        RecoverScheduleConfig::Theoretical { c, variant } => {
            let constants = inst.constants(cell, true)?;
            RecoverScheduler::Theoretical {
                constants,
                c: c.unwrap_or_else(|| default_stage_c(&constants)),
                variant: match variant {
                    GapVariantConfig::Theorem => InitialGapVariant::Theorem,
                    GapVariantConfig::Lemma => InitialGapVariant::Lemma,
                },
            }
        }
    };
    Ok(RecoverConfig {
        scheduler,
        num_stages: *num_stages,
        seed,
        return_mode: return_mode(*rm),
        sample_budget: *sample_budget,
    })
}

/// Runs one cell under one seed. Optimizer failures are reported in the
/// status together with the rows logged before them.
pub fn run_single(config: &ExperimentConfig, cell: &Cell, seed: u64) -> Result<(RunStatus, RunRecord, Option<ParamVector>)> {
    let inst = Instance::build(cell, seed)?;
    let alg = &cell.algorithm;
    let settings = log_settings(config, inst.memory_words(alg.id()));
    let accuracy = inst.test.as_ref().map(|test| AccuracyEval {
        model: inst.model.clone(),
        train: inst.train.clone(),
        test: Some(test.clone()),
        balanced: inst.balanced,
    });
    let dro = inst.dro()?;
    let erm = inst.erm();
    let monitored: &dyn CompositionalProblem = if alg.is_dro() { &dro } else { &erm };
    let mut monitor = ProblemMonitor::new(monitored);
    if let Some(eta) = config.log.eval_eta {
        monitor = monitor.with_eval_eta(eta);
    }
    if let Some(acc) = accuracy {
        monitor = monitor.with_accuracy(acc);
    }
    // oracle work for the schedules stays off the clock
    let recover_cfg = match alg {
        AlgorithmConfig::Recover { .. } => Some(recover_config(cell, &inst, seed)?),
        _ => None,
    };
    let constants = match alg {
        AlgorithmConfig::Cover {
            schedule: CoverScheduleConfig::Theorem1 { .. },
            ..
        } => Some(inst.constants(cell, false)?),
        _ => None,
    };
    let mut recorder = Recorder::new(settings, Some(&monitor));
    let w0 = inst.w0.clone();
    let result: dro_core::Result<ParamVector> = match alg {
        AlgorithmConfig::Cover {
            iterations,
            return_mode: rm,
            schedule,
            ..
        } => {
            let schedule = match *schedule {
                CoverScheduleConfig::Constant { eta, a } => StepSchedule::Constant { eta, a },
                CoverScheduleConfig::Theorem1 {
                    cap_c,
                    momentum,
                    offset,
                } => {
                    let momentum = match momentum {
                        MomentumConfig::Statement => MomentumConstant::Statement,
                        MomentumConfig::Proof => MomentumConstant::Proof,
                    };
                    let offset = match offset {
                        OffsetConfig::Cubed => OffsetTerm::Cubed,
                        OffsetConfig::Literal => OffsetTerm::Literal,
                    };
                    let k = constants.expect("computed above");
                    StepSchedule::Theorem1(Theorem1Schedule::new(&k, cap_c, momentum, offset)?)
                }
            };
            let cfg = CoverConfig {
                schedule,
                iterations: *iterations,
                seed,
                return_mode: return_mode(*rm),
            };
            cover_run_recorded(&dro, Start::Cold(w0), &cfg, &mut recorder, 1).map(|s| s.w)
        }
        AlgorithmConfig::Recover { .. } => {
            let cfg = recover_cfg.expect("computed above");
            recover_run_recorded(&dro, w0, &cfg, &mut recorder).map(|o| o.w)
        }
        AlgorithmConfig::Ascpg {
            c0,
            a_exp,
            b_exp,
            iterations,
            ..
        } => {
            let cfg = AscPgConfig {
                c0: *c0,
                a_exp: *a_exp,
                b_exp: *b_exp,
                iterations: *iterations,
                seed,
            };
            ascpg_run(&dro, w0, &cfg, &mut recorder)
        }
        AlgorithmConfig::StocAgda {
            beta1,
            tau1,
            beta2,
            tau2,
            iterations,
            ..
        } => {
            let cfg = AgdaConfig {
                beta1: *beta1,
                tau1: *tau1,
                beta2: *beta2,
                tau2: *tau2,
                iterations: *iterations,
                batch_size: inst.spec.batch_size,
                seed,
            };
            stoc_agda_run(&inst.spec, w0, &cfg, &mut recorder).map(|o| o.w)
        }
        AlgorithmConfig::Sgd {
            eta0,
            milestones,
            decay,
            epochs,
            ..
        } => {
            let cfg = SgdConfig {
                eta0: *eta0,
                milestones: milestones.clone(),
                decay: *decay,
                epochs: *epochs,
                batch_size: inst.spec.batch_size,
                seed,
            };
            sgd_erm_run(inst.model.as_ref(), &inst.train, &inst.spec.regularizer, w0, &cfg, &mut recorder)
        }
    };
    let record = recorder.finish();
    Ok(match result {
        Ok(w) if record.truncated => (RunStatus::Truncated, record, Some(w)),
        Ok(w) => (RunStatus::Clean, record, Some(w)),
        Err(e @ (dro_core::Error::Diverged { .. } | dro_core::Error::NonFiniteIterate { .. })) => {
            (RunStatus::Diverged(e.to_string()), record, None)
        }
        Err(e @ (dro_core::Error::Configuration(_) | dro_core::Error::Argument(_))) => {
            return Err(BenchError::Core(e))
        }
        Err(e) => (RunStatus::Failed(e.to_string()), record, None),
    })
}

/// CSV path of a run below `root`.
pub fn csv_path(root: &Path, cell: &str, seed: u64) -> PathBuf {
    root.join(cell).join(format!("seed{seed}.csv"))
}

fn write_record(path: &Path, record: &RunRecord) -> Result<()> {
    let dir = path.parent().expect("csv paths have a parent");
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let file = File::create(path).map_err(|e| BenchError::io(path, e))?;
    let mut out = BufWriter::new(file);
    record.write_csv(&mut out).map_err(|e| BenchError::io(path, e))?;
    out.flush().map_err(|e| BenchError::io(path, e))
}

/// Every cell under every seed. Each record is on disk before its worker
/// takes the next run; configuration errors abort the whole experiment.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<Vec<RunOutcome>> {
    config.validate()?;
    let root = options.output.clone().unwrap_or_else(|| config.output.clone());
    fs::create_dir_all(&root).map_err(|e| BenchError::io(&root, e))?;
    let manifest_path = root.join(MANIFEST_FILE);
    let manifest = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&manifest_path)
        .map_err(|e| BenchError::io(&manifest_path, e))?;
    let manifest = Mutex::new(manifest);
    let hash = config.hash();
    let cells = config.cells();
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| config.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutcome>>>> = Mutex::new(jobs.iter().map(|_| None).collect());

    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(c, seed)) = jobs.get(i) else { break };
        let cell = &cells[c];
        let outcome = run_single(config, cell, seed).and_then(|(status, record, w)| {
            let csv = csv_path(&root, &cell.label, seed);
            write_record(&csv, &record)?;
            let last = record.last();
            let entry = ManifestEntry {
                experiment: &config.name,
                config_hash: &hash,
                code_version: env!("CARGO_PKG_VERSION"),
                cell: &cell.label,
                algorithm: cell.algorithm.id(),
                seed,
                status: &status,
                csv: csv.display().to_string(),
                rows: record.rows.len(),
                samples_seen: last.map(|r| r.samples_seen),
                final_objective: last.map(|r| r.objective).filter(|x| x.is_finite()),
                final_grad_mapping_norm_sq: last.map(|r| r.grad_mapping_norm_sq).filter(|x| x.is_finite()),
                final_test_accuracy: last.and_then(|r| r.test_accuracy),
            };
            let line = serde_json::to_string(&entry)?;
            {
                let mut m = manifest.lock().expect("manifest lock");
                writeln!(m, "{line}").map_err(|e| BenchError::io(&manifest_path, e))?;
            }
            Ok(RunOutcome {
                cell: cell.label.clone(),
                seed,
                status,
                record,
                csv,
                w,
            })
        });
        let failed = outcome.is_err();
        results.lock().expect("results lock")[i] = Some(outcome);
        if failed {
            // stop handing out work; the error is reported below
            next.store(jobs.len(), Ordering::SeqCst);
        }
    };

    let workers = options.workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .flatten()
        .collect()
}
