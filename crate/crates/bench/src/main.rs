use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dro_bench::checks::{fstar_report, gradient_report};
use dro_bench::summary::{expand_glob, load_groups};
use dro_bench::{run_experiment, summarize, BenchError, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "dro-bench", version, about = "Run and summarize DRO optimizer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment over its seeds.
    Run {
        config: PathBuf,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Override the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Mean and population variance per config directory of run CSVs.
    Summarize {
        /// Glob of run CSVs, e.g. 'results/a7/*/seed*.csv'.
        pattern: String,
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
        /// Also write the summary as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Full-batch reference computations.
    Oracle {
        #[command(subcommand)]
        what: OracleCommand,
    },
    /// Consistency checks.
    Check {
        #[command(subcommand)]
        what: CheckCommand,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Estimate F* for every DRO cell on the first seed's data.
    Fstar {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        starts: usize,
    },
}

#[derive(Subcommand)]
enum CheckCommand {
    /// Compare analytic gradients with central differences.
    Gradients {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        points: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
}

fn execute(cli: Cli) -> Result<bool, BenchError> {
    match cli.command {
        Command::Run {
            config,
            workers,
            output,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcomes = run_experiment(&cfg, &RunOptions { workers, output })?;
            let mut clean = true;
            for o in &outcomes {
                let status = match &o.status {
                    dro_bench::RunStatus::Clean => "clean".to_string(),
                    dro_bench::RunStatus::Truncated => "truncated".to_string(),
                    dro_bench::RunStatus::Diverged(m) => format!("diverged: {m}"),
                    dro_bench::RunStatus::Failed(m) => format!("failed: {m}"),
                };
                clean &= o.status.is_clean();
                println!("{} seed {}: {status} -> {}", o.cell, o.seed, o.csv.display());
            }
            Ok(clean)
        }
        Command::Summarize {
            pattern,
            threshold,
            csv,
        } => {
            let paths = expand_glob(&pattern)?;
            let summary = summarize(&load_groups(&paths)?, threshold)?;
            print!("{}", summary.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, summary.to_csv()).map_err(|source| BenchError::Io { path, source })?;
            }
            Ok(true)
        }
        Command::Oracle {
            what: OracleCommand::Fstar { config, starts },
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            for r in fstar_report(&cfg, starts)? {
                let e = &r.estimate;
                println!(
                    "{}: F* = {:.12e} (|G| = {:.2e}, {} iterations{}{})",
                    r.cell,
                    e.value,
                    e.grad_mapping_norm,
                    e.iterations,
                    if e.converged { "" } else { ", not converged" },
                    if e.local_only { ", local" } else { "" },
                );
            }
            Ok(true)
        }
        Command::Check {
            what: CheckCommand::Gradients { config, points, tol },
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let mut ok = true;
            for r in gradient_report(&cfg, points)? {
                let pass = r.worst() <= tol;
                ok &= pass;
                println!(
                    "{}: loss {:.2e}, objective {:.2e} {}",
                    r.cell,
                    r.loss_error,
                    r.objective_error,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
