//! Per-config mean and population variance of run outcomes.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use dro_core::RunRecord;

use crate::error::{BenchError, Result};

/// Printed in place of a statistic when some run never reached the threshold.
pub const NEVER: &str = "∞";

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "config",
    "runs",
    "final_test_accuracy_mean",
    "final_test_accuracy_popvar",
    "samples_to_threshold_mean",
    "samples_to_threshold_popvar",
    "wallclock_to_threshold_mean",
    "wallclock_to_threshold_popvar",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stat {
    /// Mean and population variance.
    Value { mean: f64, var: f64 },
    /// At least one run never got there.
    Never,
    /// No run reports the quantity.
    Absent,
}

impl Stat {
    fn cells(&self) -> [String; 2] {
        match *self {
            Stat::Value { mean, var } => [format!("{mean}"), format!("{var}")],
            Stat::Never => [NEVER.into(), NEVER.into()],
            Stat::Absent => [String::new(), String::new()],
        }
    }
}

/// Mean and population variance (divisor `n`).
pub fn mean_popvar(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some((mean, var))
}

fn stat_of(values: &[Option<f64>], missing_is_never: bool) -> Stat {
    if missing_is_never && values.iter().any(Option::is_none) {
        return Stat::Never;
    }
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    match mean_popvar(&present) {
        Some((mean, var)) => Stat::Value { mean, var },
        None => Stat::Absent,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub config: String,
    pub runs: usize,
    pub final_test_accuracy: Stat,
    pub samples_to_threshold: Stat,
    pub wallclock_to_threshold: Stat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub threshold: f64,
    pub rows: Vec<SummaryRow>,
}

/// One row per named group of records, in input order.
pub fn summarize(groups: &[(String, Vec<RunRecord>)], threshold: f64) -> Result<Summary> {
    if groups.iter().all(|(_, r)| r.is_empty()) {
        return Err(BenchError::Argument("nothing to summarize".into()));
    }
    let rows = groups
        .iter()
        .filter(|(_, records)| !records.is_empty())
        .map(|(config, records)| {
            let acc: Vec<Option<f64>> = records.iter().map(|r| r.last().and_then(|x| x.test_accuracy)).collect();
            let samples: Vec<Option<f64>> = records
                .iter()
                .map(|r| r.samples_to_threshold(threshold).map(|s| s as f64))
                .collect();
            let clock: Vec<Option<f64>> = records.iter().map(|r| r.wallclock_to_threshold(threshold)).collect();
            SummaryRow {
                config: config.clone(),
                runs: records.len(),
                final_test_accuracy: stat_of(&acc, false),
                samples_to_threshold: stat_of(&samples, true),
                wallclock_to_threshold: stat_of(&clock, true),
            }
        })
        .collect();
    Ok(Summary { threshold, rows })
}

impl Summary {
    fn table(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.config.clone(), r.runs.to_string()];
                for s in [r.final_test_accuracy, r.samples_to_threshold, r.wallclock_to_threshold] {
                    cells.extend(s.cells());
                }
                cells
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = SUMMARY_COLUMNS.join(",");
        out.push('\n');
        for row in self.table() {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Space-padded columns for terminals.
    pub fn to_text(&self) -> String {
        let mut table = vec![SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        table.extend(self.table());
        let widths: Vec<usize> = (0..SUMMARY_COLUMNS.len())
            .map(|j| table.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("threshold {:e} on grad_mapping_norm_sq; variances divide by n\n", self.threshold);
        for row in table {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Reads run CSVs and groups them by their parent directory name.
pub fn load_groups(paths: &[PathBuf]) -> Result<Vec<(String, Vec<RunRecord>)>> {
    let mut groups: Vec<(String, Vec<RunRecord>)> = Vec::new();
    for path in paths {
        let file = File::open(path).map_err(|e| BenchError::io(path, e))?;
        let record = RunRecord::read_csv(BufReader::new(file))?;
        let name = group_name(path);
        match groups.iter_mut().find(|(g, _)| *g == name) {
            Some((_, v)) => v.push(record),
            None => groups.push((name, vec![record])),
        }
    }
    Ok(groups)
}

fn group_name(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| ".".into())
}

/// Sorted CSV paths matching `pattern`.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in glob::glob(pattern)? {
        let path = entry.map_err(|e| {
            let path = e.path().to_path_buf();
            BenchError::io(path, e.into())
        })?;
        if path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}
