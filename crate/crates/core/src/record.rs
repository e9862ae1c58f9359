//! Run records: the metric time series every optimizer emits.

use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::models::{accuracy, balanced_accuracy, Dataset, LossModel};
use crate::oracle::gradient_mapping;
use crate::problem::CompositionalProblem;

/// Version tag written on the first line of every record file.
pub const CSV_SCHEMA: &str = "runrecord/v1";

pub const CSV_COLUMNS: [&str; 10] = [
    "stage",
    "iteration",
    "samples_seen",
    "wallclock_s",
    "objective",
    "grad_mapping_norm_sq",
    "train_accuracy",
    "test_accuracy",
    "clamp_count",
    "memory_words",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub stage: usize,
    pub iteration: u64,
    pub samples_seen: u64,
    pub wallclock_s: f64,
    pub objective: f64,
    pub grad_mapping_norm_sq: f64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub clamp_count: u64,
    pub memory_words: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    /// The run stopped early on its sample or wall-clock budget.
    pub truncated: bool,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v}"))
}

impl RunRecord {
    pub fn last(&self) -> Option<&RunRow> {
        self.rows.last()
    }

    /// First logged sample count at which the gradient-mapping norm
    /// squared falls to `threshold` or below.
    pub fn samples_to_threshold(&self, threshold: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.grad_mapping_norm_sq <= threshold)
            .map(|r| r.samples_seen)
    }

    pub fn wallclock_to_threshold(&self, threshold: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.grad_mapping_norm_sq <= threshold)
            .map(|r| r.wallclock_s)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#schema: {CSV_SCHEMA}")?;
        writeln!(out, "{}", CSV_COLUMNS.join(","))?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.stage,
                r.iteration,
                r.samples_seen,
                r.wallclock_s,
                r.objective,
                r.grad_mapping_norm_sq,
                opt(r.train_accuracy),
                opt(r.test_accuracy),
                r.clamp_count,
                r.memory_words
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is ASCII")
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |msg: String| Error::Argument(format!("malformed run record: {msg}"));
        let mut lines = input.lines();
        let mut next = || -> Result<Option<String>> {
            lines.next().transpose().map_err(|e| bad(e.to_string()))
        };
        let first = next()?.ok_or_else(|| bad("empty input".into()))?;
        let header = match first.strip_prefix("#schema: ") {
            Some(v) if v == CSV_SCHEMA => next()?.ok_or_else(|| bad("missing header".into()))?,
            Some(v) => return Err(bad(format!("unknown schema {v}"))),
            None => first,
        };
        if header != CSV_COLUMNS.join(",") {
            return Err(bad(format!("unexpected header {header}")));
        }
        let mut rows = Vec::new();
        while let Some(line) = next()? {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != CSV_COLUMNS.len() {
                return Err(bad(format!("expected {} fields in {line:?}", CSV_COLUMNS.len())));
            }
            let int = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("{s:?}: {e}")));
            let real = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            let optional = |s: &str| if s.is_empty() { Ok(None) } else { real(s).map(Some) };
            rows.push(RunRow {
                stage: int(f[0])? as usize,
                iteration: int(f[1])?,
                samples_seen: int(f[2])?,
                wallclock_s: real(f[3])?,
                objective: real(f[4])?,
                grad_mapping_norm_sq: real(f[5])?,
                train_accuracy: optional(f[6])?,
                test_accuracy: optional(f[7])?,
                clamp_count: int(f[8])?,
                memory_words: int(f[9])?,
            });
        }
        Ok(Self { rows, truncated: false })
    }
}

/// Metrics evaluated at a logged iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub objective: f64,
    pub grad_mapping_norm_sq: f64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// Evaluates metrics at an iterate; `eta` is the step size in force.
pub trait Monitor: Send + Sync {
    fn observe(&self, w: &[f64], eta: f64) -> Result<Observation>;
}

/// Accuracy evaluation attached to a monitor.
#[derive(Debug, Clone)]
pub struct AccuracyEval {
    pub model: Arc<dyn LossModel>,
    pub train: Arc<Dataset>,
    pub test: Option<Arc<Dataset>>,
    /// Report mean per-class recall instead of plain accuracy.
    pub balanced: bool,
}

impl AccuracyEval {
    fn score(&self, w: &[f64], data: &Dataset) -> Option<f64> {
        if self.balanced {
            balanced_accuracy(self.model.as_ref(), w, data)
        } else {
            accuracy(self.model.as_ref(), w, data)
        }
    }
}

/// Full-batch objective and gradient mapping of a problem, plus optional
/// accuracies.
pub struct ProblemMonitor<'a> {
    pub problem: &'a dyn CompositionalProblem,
    pub accuracy: Option<AccuracyEval>,
    /// Step used for the gradient mapping instead of the optimizer's own,
    /// so runs with different schedules are measured alike.
    pub eval_eta: Option<f64>,
}

impl<'a> ProblemMonitor<'a> {
    pub fn new(problem: &'a dyn CompositionalProblem) -> Self {
        Self {
            problem,
            accuracy: None,
            eval_eta: None,
        }
    }

    pub fn with_eval_eta(mut self, eta: f64) -> Self {
        self.eval_eta = Some(eta);
        self
    }

    pub fn with_accuracy(mut self, eval: AccuracyEval) -> Self {
        self.accuracy = Some(eval);
        self
    }
}

impl Monitor for ProblemMonitor<'_> {
    fn observe(&self, w: &[f64], eta: f64) -> Result<Observation> {
        let objective = self.problem.exact_objective(w)?;
        let g = gradient_mapping(w, self.problem, self.eval_eta.unwrap_or(eta))?;
        let (train_accuracy, test_accuracy) = match &self.accuracy {
            Some(acc) => (
                acc.score(w, &acc.train),
                acc.test.as_ref().and_then(|t| acc.score(w, t)),
            ),
            None => (None, None),
        };
        Ok(Observation {
            objective,
            grad_mapping_norm_sq: g.norm_sq(),
            train_accuracy,
            test_accuracy,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSettings {
    /// Log whenever at least this many samples were consumed since the last row.
    pub log_every: u64,
    pub max_samples: Option<u64>,
    pub max_wallclock_s: Option<f64>,
    pub memory_words: u64,
}

impl Default for LogSettings {
    fn default() -> Self {
        Self {
            log_every: 1000,
            max_samples: None,
            max_wallclock_s: None,
            memory_words: 0,
        }
    }
}

impl LogSettings {
    pub fn every(log_every: u64) -> Self {
        Self {
            log_every,
            ..Self::default()
        }
    }
}

/// Collects rows during a run. Time spent in the monitor is excluded from
/// the logged wall-clock.
pub struct Recorder<'m> {
    settings: LogSettings,
    monitor: Option<&'m dyn Monitor>,
    start: Instant,
    excluded: Duration,
    next_log: u64,
    record: RunRecord,
}

impl<'m> Recorder<'m> {
    pub fn new(settings: LogSettings, monitor: Option<&'m dyn Monitor>) -> Self {
        Self {
            settings,
            monitor,
            start: Instant::now(),
            excluded: Duration::ZERO,
            next_log: 0,
            record: RunRecord::default(),
        }
    }

    /// A recorder that keeps no rows.
    pub fn silent() -> Self {
        Self::new(
            LogSettings {
                log_every: u64::MAX,
                ..LogSettings::default()
            },
            None,
        )
    }

    pub fn settings(&self) -> &LogSettings {
        &self.settings
    }

    pub fn elapsed_s(&self) -> f64 {
        (self.start.elapsed().saturating_sub(self.excluded)).as_secs_f64()
    }

    /// Appends a row unless `samples_seen` was already logged.
    pub fn log(
        &mut self,
        stage: usize,
        iteration: u64,
        samples_seen: u64,
        w: &[f64],
        eta: f64,
        clamp_count: u64,
    ) -> Result<()> {
        if self.record.rows.last().is_some_and(|r| r.samples_seen >= samples_seen) {
            return Ok(());
        }
        let wallclock_s = self.elapsed_s();
        let obs = match self.monitor {
            Some(m) => {
                let t0 = Instant::now();
                let obs = m.observe(w, eta)?;
                self.excluded += t0.elapsed();
                obs
            }
            None => Observation {
                objective: f64::NAN,
                grad_mapping_norm_sq: f64::NAN,
                train_accuracy: None,
                test_accuracy: None,
            },
        };
        if self.monitor.is_some() && !obs.objective.is_finite() {
            return Err(Error::Diverged {
                t: iteration,
                norm: crate::linalg::norm(w),
            });
        }
        self.record.rows.push(RunRow {
            stage,
            iteration,
            samples_seen,
            wallclock_s,
            objective: obs.objective,
            grad_mapping_norm_sq: obs.grad_mapping_norm_sq,
            train_accuracy: obs.train_accuracy,
            test_accuracy: obs.test_accuracy,
            clamp_count,
            memory_words: self.settings.memory_words,
        });
        Ok(())
    }

    /// Logs if the logging interval has elapsed.
    pub fn maybe_log(
        &mut self,
        stage: usize,
        iteration: u64,
        samples_seen: u64,
        w: &[f64],
        eta: f64,
        clamp_count: u64,
    ) -> Result<()> {
        if self.settings.log_every == u64::MAX || samples_seen < self.next_log {
            return Ok(());
        }
        self.log(stage, iteration, samples_seen, w, eta, clamp_count)?;
        self.next_log = samples_seen.saturating_add(self.settings.log_every);
        Ok(())
    }

    /// True once the sample or wall-clock budget is spent; marks the record
    /// truncated.
    pub fn out_of_budget(&mut self, samples_seen: u64) -> bool {
        let over_samples = self.settings.max_samples.is_some_and(|m| samples_seen >= m);
        let over_time = self
            .settings
            .max_wallclock_s
            .is_some_and(|m| self.elapsed_s() >= m);
        if over_samples || over_time {
            self.record.truncated = true;
        }
        self.record.truncated
    }

    pub fn is_enabled(&self) -> bool {
        self.settings.log_every != u64::MAX
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn finish(self) -> RunRecord {
        self.record
    }
}
