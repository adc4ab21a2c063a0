//! Experiment runner for the `darksol` library: reads a JSON manifest, runs
//! one experiment kind, writes a CSV table and a JSON report, and prints one
//! verdict line per check.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

pub use config::{ConfigError, Experiment, ExperimentConfig};
use output::{write_json, Check, Report};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Domain(#[from] darksol::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Domain(_) => 3,
            CliError::Write { .. } => 4,
        }
    }
}

/// Artifacts and verdicts of one finished run.
#[derive(Debug)]
pub struct RunSummary {
    pub kind: &'static str,
    pub csv: Vec<PathBuf>,
    pub report: PathBuf,
    pub checks: Vec<Check>,
}

impl RunSummary {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(!self.pass())
    }
}

/// Resolves and validates a config without running it.
pub fn prepare(config: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
    let config = config.resolve()?;
    config.validate()?;
    Ok(config)
}

/// Runs an already prepared config.
pub fn execute(config: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let nl = config.nonlinearity()?;
    let grid = config.grid()?;
    let out = match &config.experiment {
        Experiment::Profile(p) => experiments::profile(&nl, &grid, p)?,
        Experiment::Spectrum(p) => experiments::spectrum(&nl, &grid, p)?,
        Experiment::Evolve(p) => experiments::evolve(&nl, &grid, config.seed, p)?,
        Experiment::ChainStability(p) => experiments::chain_stability(&nl, &grid, config.seed, p)?,
        Experiment::VerifyAppendix(p) => experiments::verify_appendix(&nl, &grid, config.seed, p)?,
    };
    let stem = config.stem();
    let mut csv = Vec::new();
    for (suffix, table) in &out.tables {
        let name = match suffix {
            Some(s) => format!("{stem}-{s}.csv"),
            None => format!("{stem}.csv"),
        };
        let path = config.output.dir.join(name);
        table.write(&path).map_err(|source| CliError::Write { path: path.clone(), source })?;
        csv.push(path);
    }
    let kind = config.experiment.kind();
    let pass = out.checks.iter().all(|c| c.pass);
    let report = config.report_path();
    write_json(&report, &Report { kind, config, pass, checks: &out.checks, results: out.results })
        .map_err(|source| CliError::Write { path: report.clone(), source })?;
    Ok(RunSummary { kind, csv, report, checks: out.checks })
}

/// prepare + execute.
pub fn run(config: ExperimentConfig) -> Result<RunSummary, CliError> {
    execute(&prepare(config)?)
}

/// Worker count for sweeps: DARKSOL_THREADS if set and positive, else all cores.
pub fn sweep_threads() -> usize {
    std::env::var("DARKSOL_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Validates every config first, so a bad manifest stops the sweep before
/// any computation, then runs them in parallel. Results keep input order.
pub fn sweep(configs: Vec<ExperimentConfig>, threads: usize) -> Result<Vec<Result<RunSummary, CliError>>, CliError> {
    let prepared: Vec<ExperimentConfig> = configs.into_iter().map(prepare).collect::<Result<_, _>>()?;
    let mut reports: Vec<PathBuf> = prepared.iter().map(|c| c.report_path()).collect();
    reports.sort();
    if let Some(w) = reports.windows(2).find(|w| w[0] == w[1]) {
        return Err(ConfigError::Invalid(format!("two sweep entries write to {}", w[0].display())).into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| ConfigError::Invalid(format!("cannot start {threads} sweep threads: {e}")))?;
    Ok(pool.install(|| prepared.par_iter().map(execute).collect()))
}
