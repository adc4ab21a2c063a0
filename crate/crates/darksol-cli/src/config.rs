//! Experiment manifests: parsing, defaults and validation.

use std::fs;
use std::path::{Path, PathBuf};

use darksol::diagnostics::min_nu;
use darksol::evolution::EvolutionConfig;
use darksol::localization::CutoffRates;
use darksol::modulation::ChainSpec;
use darksol::nonlinearity::NonlinearityKind;
use darksol::{Grid, Nonlinearity};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("schema error in {path}: {source}")]
    Schema { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
    #[error("output directory {0} does not exist")]
    MissingOutputDir(PathBuf),
    #[error("output directory {path} is not writable: {source}")]
    NotWritable { path: PathBuf, source: std::io::Error },
    #[error("config kind `{found}` does not match subcommand `{expected}`")]
    KindMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "gp")]
    pub nonlinearity: NonlinearityKind,
    pub grid: GridSpec,
    pub experiment: Experiment,
    pub output: OutputSpec,
    #[serde(default)]
    pub seed: u64,
}

fn gp() -> NonlinearityKind {
    NonlinearityKind::GrossPitaevskii
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// file stem for `<stem>.csv` and `<stem>.json`; defaults to the kind
    #[serde(default)]
    pub stem: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Profile(ProfileParams),
    Spectrum(SpectrumParams),
    Evolve(EvolveParams),
    ChainStability(ChainStabilityParams),
    VerifyAppendix(AppendixParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Profile(_) => "profile",
            Experiment::Spectrum(_) => "spectrum",
            Experiment::Evolve(_) => "evolve",
            Experiment::ChainStability(_) => "chain-stability",
            Experiment::VerifyAppendix(_) => "verify-appendix",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileParams {
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumParams {
    pub speed: f64,
    #[serde(default = "four")]
    pub eigenvalues: usize,
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveParams {
    pub chain: ChainSpec,
    #[serde(default)]
    pub alpha0: f64,
    pub evolution: EvolutionConfig,
    pub snapshot_dt: f64,
    /// relative drift allowed for E and p
    #[serde(default = "drift_tol")]
    pub drift_tolerance: f64,
    #[serde(default = "yes")]
    pub track: bool,
}

fn drift_tol() -> f64 {
    1e-6
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainStabilityParams {
    pub chain: ChainSpec,
    pub alpha0: f64,
    /// defaults to (ν/8, ν/16) for the slowest soliton
    #[serde(default)]
    pub rates: Option<CutoffRates>,
    #[serde(default)]
    pub extra_rates: Vec<CutoffRates>,
    pub evolution: EvolutionConfig,
    pub snapshot_dt: f64,
    /// rerun at α₀/2 and check the linear scaling of the sup distance
    #[serde(default)]
    pub halve_alpha: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixParams {
    #[serde(default = "draws")]
    pub draws: usize,
    #[serde(default = "chain_speeds")]
    pub speeds: Vec<f64>,
    #[serde(default = "f_speeds")]
    pub f_speeds: Vec<f64>,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default = "gaps")]
    pub gaps: Vec<f64>,
}

fn draws() -> usize {
    10_000
}

fn chain_speeds() -> Vec<f64> {
    vec![1.2, 1.3]
}

fn f_speeds() -> Vec<f64> {
    vec![1.35, 1.38]
}

fn two() -> f64 {
    2.0
}

fn gaps() -> Vec<f64> {
    vec![40.0, 60.0, 80.0]
}

impl Default for AppendixParams {
    fn default() -> Self {
        Self { draws: draws(), speeds: chain_speeds(), f_speeds: f_speeds(), p: two(), gaps: gaps() }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Schema { path: origin.into(), source })
    }

    pub fn stem(&self) -> String {
        self.output.stem.clone().unwrap_or_else(|| self.experiment.kind().to_string())
    }

    pub fn csv_path(&self) -> PathBuf {
        self.output.dir.join(format!("{}.csv", self.stem()))
    }

    pub fn report_path(&self) -> PathBuf {
        self.output.dir.join(format!("{}.json", self.stem()))
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(self.grid.n, self.grid.length).map_err(invalid)
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity, ConfigError> {
        let nl = Nonlinearity::from_kind(&self.nonlinearity).map_err(invalid)?;
        nl.sound_speed().map_err(invalid)?;
        Ok(nl)
    }

    /// Fills defaults that depend on other fields, so the report carries
    /// exactly what was run. `snapshot_every` is derived from `snapshot_dt`.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        if let Experiment::ChainStability(p) = &mut self.experiment {
            if p.rates.is_none() {
                let nl = Nonlinearity::from_kind(&self.nonlinearity).map_err(invalid)?;
                let nu = min_nu(&nl, &p.chain.speeds).map_err(invalid)?;
                p.rates = Some(CutoffRates::default_for(nu));
            }
        }
        let dx = self.grid.length / self.grid.n as f64;
        let snapshots = |e: &mut EvolutionConfig, every: f64| {
            let (_, dt) = e.schedule(dx);
            e.snapshot_every = ((every / dt).round() as usize).max(1);
        };
        match &mut self.experiment {
            Experiment::Evolve(p) => snapshots(&mut p.evolution, p.snapshot_dt),
            Experiment::ChainStability(p) => snapshots(&mut p.evolution, p.snapshot_dt),
            _ => {}
        }
        if self.output.stem.is_none() {
            self.output.stem = Some(self.experiment.kind().to_string());
        }
        Ok(self)
    }

    /// Everything that can be checked without running the experiment,
    /// including that the output directory exists and accepts files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_output_dir(&self.output.dir)?;
        let stem = self.stem();
        if stem.is_empty() || stem.contains(['/', '\\']) {
            return Err(ConfigError::Invalid(format!("output stem `{stem}` must be a plain file name")));
        }
        let nl = self.nonlinearity()?;
        let c_s = nl.sound_speed().map_err(invalid)?;
        let grid = self.grid()?;
        match &self.experiment {
            Experiment::Profile(p) => check_speed(p.speed, c_s)?,
            Experiment::Spectrum(p) => {
                check_speed(p.speed, c_s)?;
                if p.eigenvalues == 0 || p.eigenvalues > 2 * grid.n {
                    return Err(ConfigError::Invalid(format!("eigenvalues = {} must lie in 1..={}", p.eigenvalues, 2 * grid.n)));
                }
            }
            Experiment::Evolve(p) => {
                p.chain.validate(&nl).map_err(invalid)?;
                check_evolution(&p.evolution, p.snapshot_dt)?;
                check_alpha(p.alpha0)?;
                if !(p.drift_tolerance > 0.0) {
                    return Err(ConfigError::Invalid("drift_tolerance must be positive".into()));
                }
            }
            Experiment::ChainStability(p) => {
                p.chain.validate(&nl).map_err(invalid)?;
                check_evolution(&p.evolution, p.snapshot_dt)?;
                check_alpha(p.alpha0)?;
                let nu = min_nu(&nl, &p.chain.speeds).map_err(invalid)?;
                for r in p.rates.iter().chain(&p.extra_rates) {
                    r.check(nu).map_err(invalid)?;
                }
            }
            Experiment::VerifyAppendix(p) => {
                if p.gaps.len() < 2 {
                    return Err(ConfigError::Invalid("verify-appendix needs at least two gaps".into()));
                }
                if !(p.p >= 1.0) {
                    return Err(ConfigError::Invalid(format!("p = {} must be >= 1", p.p)));
                }
                for speeds in [&p.speeds, &p.f_speeds] {
                    ChainSpec::new(speeds.clone(), (0..speeds.len()).map(|i| i as f64).collect(), 0.0).validate(&nl).map_err(invalid)?;
                }
            }
        }
        Ok(())
    }
}

fn invalid(e: darksol::Error) -> ConfigError {
    match e {
        // the library phrases ordering problems as "bad ordering: <what>"
        darksol::Error::BadOrdering(msg) => ConfigError::Invalid(msg),
        other => ConfigError::Invalid(other.to_string()),
    }
}

fn check_speed(c: f64, c_s: f64) -> Result<(), ConfigError> {
    if !(c > 0.0 && c < c_s) {
        return Err(ConfigError::Invalid(format!("speed {c} outside (0, {c_s})")));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<(), ConfigError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(ConfigError::Invalid(format!("alpha0 = {alpha} must be finite and >= 0")));
    }
    Ok(())
}

fn check_evolution(e: &EvolutionConfig, snapshot_dt: f64) -> Result<(), ConfigError> {
    e.validate().map_err(invalid)?;
    if !(snapshot_dt > 0.0 && snapshot_dt.is_finite()) {
        return Err(ConfigError::Invalid(format!("snapshot_dt = {snapshot_dt} must be positive")));
    }
    Ok(())
}

fn check_output_dir(dir: &Path) -> Result<(), ConfigError> {
    if !dir.is_dir() {
        return Err(ConfigError::MissingOutputDir(dir.into()));
    }
    let probe = dir.join(format!(".darksol-probe-{}", std::process::id()));
    fs::write(&probe, b"").map_err(|source| ConfigError::NotWritable { path: dir.into(), source })?;
    let _ = fs::remove_file(probe);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::parse(s, Path::new("inline"))
    }

    #[test]
    fn minimal_profile_parses_with_defaults() {
        let c = parse(r#"{"grid":{"n":512,"length":100},"experiment":{"kind":"profile","speed":1.0},"output":{"dir":"."}}"#).unwrap();
        assert_eq!(c.nonlinearity, NonlinearityKind::GrossPitaevskii);
        assert_eq!(c.seed, 0);
        assert_eq!(c.stem(), "profile");
    }

    #[test]
    fn unknown_fields_are_schema_errors() {
        let e = parse(r#"{"grid":{"n":512,"length":100,"m":1},"experiment":{"kind":"profile","speed":1.0},"output":{"dir":"."}}"#);
        assert!(matches!(e, Err(ConfigError::Schema { .. })));
        let e = parse(r#"{"grid":{"n":512,"length":100},"experiment":{"kind":"profile","speed":1.0,"x":2},"output":{"dir":"."}}"#);
        assert!(matches!(e, Err(ConfigError::Schema { .. })));
        let e = parse(r#"{"grid":{"n":512,"length":100},"experiment":{"kind":"nope"},"output":{"dir":"."}}"#);
        assert!(matches!(e, Err(ConfigError::Schema { .. })));
    }

    #[test]
    fn reversed_speeds_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            r#"{{"grid":{{"n":1024,"length":400}},
                "experiment":{{"kind":"chain-stability","chain":{{"speeds":[1.3,1.2],"positions":[-60,0],"min_gap":59}},
                               "alpha0":1e-3,"evolution":{{"t_end":1}},"snapshot_dt":0.5}},
                "output":{{"dir":{:?}}}}}"#,
            dir.path()
        );
        let err = parse(&text).unwrap().resolve().unwrap().validate().unwrap_err();
        assert_eq!(err.to_string(), "speeds must be strictly increasing");
    }

    #[test]
    fn resolve_fills_default_rates() {
        let text = r#"{"grid":{"n":1024,"length":400},
            "experiment":{"kind":"chain-stability","chain":{"speeds":[1.2,1.3],"positions":[-60,0],"min_gap":59},
                          "alpha0":1e-3,"evolution":{"t_end":1},"snapshot_dt":0.5},
            "output":{"dir":"."}}"#;
        let c = parse(text).unwrap().resolve().unwrap();
        let Experiment::ChainStability(p) = &c.experiment else { panic!() };
        let nu = (2.0f64 - 1.69).sqrt();
        let r = p.rates.unwrap();
        assert!((r.tau - nu / 8.0).abs() < 1e-15 && (r.tau0 - nu / 16.0).abs() < 1e-15);
        assert_eq!(c.output.stem.as_deref(), Some("chain-stability"));
    }

    #[test]
    fn missing_dir_rejected() {
        let c = parse(r#"{"grid":{"n":512,"length":100},"experiment":{"kind":"profile","speed":1.0},"output":{"dir":"/no/such/dir"}}"#)
            .unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::MissingOutputDir(_))));
    }

    #[test]
    fn round_trip_is_stable() {
        let c = parse(r#"{"grid":{"n":512,"length":100},"experiment":{"kind":"verify-appendix"},"output":{"dir":"."},"seed":3}"#)
            .unwrap()
            .resolve()
            .unwrap();
        let again = parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
        let Experiment::VerifyAppendix(p) = c.experiment else { panic!() };
        assert_eq!(p, AppendixParams::default());
    }
}
