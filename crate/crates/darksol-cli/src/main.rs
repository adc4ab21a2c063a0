use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use darksol::evolution::EvolutionConfig;
use darksol::modulation::ChainSpec;
use darksol::nonlinearity::NonlinearityKind;
use darksol_cli::config::{AppendixParams, ChainStabilityParams, EvolveParams, GridSpec, OutputSpec, ProfileParams, SpectrumParams};
use darksol_cli::{execute, prepare, sweep, sweep_threads, CliError, ConfigError, Experiment, ExperimentConfig, RunSummary};

/// Dark-soliton experiments. Each subcommand builds a manifest from its flags,
/// or reads one with --config, in which case the file is authoritative and
/// the other flags are ignored.
#[derive(Parser)]
#[command(name = "darksol", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run manifests of any kind.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Run several manifests in parallel (DARKSOL_THREADS caps the workers).
        #[arg(long)]
        sweep: bool,
    },
    /// Traveling-wave profile and its momentum.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Low spectrum of the linearized operator.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = 4)]
        eigenvalues: usize,
    },
    /// Evolve a (perturbed) chain and monitor E, p and the modulation parameters.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, default_value_t = 1e-6)]
        drift_tolerance: f64,
    },
    /// Orbital stability and monotonicity of a two-or-more soliton chain.
    ChainStability {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        chain: ChainArgs,
        /// Rerun at alpha0/2 and check the sup distance halves.
        #[arg(long)]
        halve_alpha: bool,
    },
    /// Cross-term bounds and decay-rate checks.
    VerifyAppendix {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Manifest to run instead of the flags; repeat with --sweep.
    #[arg(long)]
    config: Vec<PathBuf>,
    #[arg(long)]
    sweep: bool,
    #[arg(long, default_value_t = 2048)]
    n: usize,
    #[arg(long, default_value_t = 200.0)]
    length: f64,
    /// Coefficients b_j of f(ρ) = Σ b_j (1−ρ)^j; Gross–Pitaevskii when absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    coeffs: Option<Vec<f64>>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    stem: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ChainArgs {
    #[arg(long, value_delimiter = ',', default_value = "1.2,1.3")]
    speeds: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-30,30")]
    positions: Vec<f64>,
    /// Separation scale L; defaults to just below the smallest initial gap.
    #[arg(long)]
    min_gap: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    alpha0: f64,
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0.2)]
    cfl: f64,
    #[arg(long, default_value_t = 0.5)]
    snapshot_dt: f64,
}

impl ChainArgs {
    fn spec(&self) -> ChainSpec {
        let gap = self.positions.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let min_gap = self.min_gap.unwrap_or(if gap.is_finite() { gap - 1.0 } else { 0.0 });
        ChainSpec::new(self.speeds.clone(), self.positions.clone(), min_gap)
    }

    fn evolution(&self) -> EvolutionConfig {
        EvolutionConfig { cfl_lambda: self.cfl, ..EvolutionConfig::new(self.t_end) }
    }
}

impl Common {
    fn manifest(&self, experiment: Experiment) -> ExperimentConfig {
        ExperimentConfig {
            nonlinearity: match &self.coeffs {
                Some(c) => NonlinearityKind::PolynomialInOneMinusRho { coeffs: c.clone() },
                None => NonlinearityKind::GrossPitaevskii,
            },
            grid: GridSpec { n: self.n, length: self.length },
            experiment,
            output: OutputSpec { dir: self.out_dir.clone(), stem: self.stem.clone() },
            seed: self.seed,
        }
    }
}

fn load(path: &Path, expected: Option<&str>) -> Result<ExperimentConfig, CliError> {
    let c = ExperimentConfig::load(path)?;
    if let Some(kind) = expected {
        if c.experiment.kind() != kind {
            return Err(ConfigError::KindMismatch { expected: kind.into(), found: c.experiment.kind().into() }.into());
        }
    }
    Ok(c)
}

fn print_summary(label: Option<&Path>, s: &RunSummary) {
    let prefix = label.map_or(String::new(), |p| format!("[{}] ", p.display()));
    for c in &s.checks {
        println!("{prefix}{}", c.line());
    }
    let files: Vec<String> = s.csv.iter().chain([&s.report]).map(|p| p.display().to_string()).collect();
    println!("{prefix}{} {}: {}", if s.pass() { "PASS" } else { "FAIL" }, s.kind, files.join(", "));
}

fn run_files(paths: &[PathBuf], parallel: bool, expected: Option<&str>) -> i32 {
    if paths.len() > 1 && !parallel {
        eprintln!("error: several configs given; pass --sweep to run them all");
        return 2;
    }
    let configs: Vec<ExperimentConfig> = match paths.iter().map(|p| load(p, expected)).collect() {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    if !parallel {
        return run_one(configs.into_iter().next().unwrap());
    }
    let results = match sweep(configs, sweep_threads()) {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    let mut code = 0;
    for (path, r) in paths.iter().zip(results) {
        code = code.max(match r {
            Ok(s) => {
                print_summary(Some(path), &s);
                s.exit_code()
            }
            Err(e) => {
                eprint!("[{}] ", path.display());
                report_error(&e)
            }
        });
    }
    code
}

fn run_one(config: ExperimentConfig) -> i32 {
    match prepare(config).map_err(CliError::from).and_then(|c| execute(&c)) {
        Ok(s) => {
            print_summary(None, &s);
            s.exit_code()
        }
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &CliError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

fn dispatch(common: &Common, experiment: Experiment) -> i32 {
    if common.config.is_empty() {
        run_one(common.manifest(experiment))
    } else {
        run_files(&common.config, common.sweep, Some(experiment.kind()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { configs, sweep } => run_files(&configs, sweep, None),
        Command::Profile { common, speed } => dispatch(&common, Experiment::Profile(ProfileParams { speed })),
        Command::Spectrum { common, speed, eigenvalues } => dispatch(&common, Experiment::Spectrum(SpectrumParams { speed, eigenvalues })),
        Command::Evolve { common, chain, drift_tolerance } => dispatch(
            &common,
            Experiment::Evolve(EvolveParams {
                chain: chain.spec(),
                alpha0: chain.alpha0,
                evolution: chain.evolution(),
                snapshot_dt: chain.snapshot_dt,
                drift_tolerance,
                track: true,
            }),
        ),
        Command::ChainStability { common, chain, halve_alpha } => dispatch(
            &common,
            Experiment::ChainStability(ChainStabilityParams {
                chain: chain.spec(),
                alpha0: chain.alpha0,
                rates: None,
                extra_rates: Vec::new(),
                evolution: chain.evolution(),
                snapshot_dt: chain.snapshot_dt,
                halve_alpha,
            }),
        ),
        Command::VerifyAppendix { common, draws } => {
            dispatch(&common, Experiment::VerifyAppendix(AppendixParams { draws, ..AppendixParams::default() }))
        }
    };
    ExitCode::from(code as u8)
}
