//! Command-line front end.
//!
//! `analyze` runs the sensitivity sweep on a CSV file; `simulate` runs the
//! Monte Carlo study on the synthetic mechanism. Both write tables plus a
//! manifest whose digest every output references.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bootstrap::{derive_seed, fitted_mechanism, parametric_bootstrap, BootstrapError, BootstrapPlan};
use crate::data::{load_csv, Arm, DataError, DesignSpec, StudyConfig};
use crate::sensitivity::{analyze, Analysis, EstimatorConfig};
use crate::sim::{run_study, GeneratingMechanism, SimStudyConfig, SimStudyResult, SyntheticParams};

#[derive(Debug, Parser)]
#[command(name = "sensurv", version, about = "Sensitivity analysis for unmeasured confounding with censored survival data")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate counterfactual failure probabilities over a sensitivity grid.
    Analyze(AnalyzeArgs),
    /// Run the bias and coverage simulation study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON design specification naming the outcome, treatment and covariate columns.
    #[arg(long)]
    pub spec: PathBuf,
    /// JSON analysis configuration; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub s_grid: Option<Vec<f64>>,
    /// Sensitivity values for the treated arm.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub gamma1: Option<Vec<f64>>,
    /// Sensitivity values for the control arm.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub gamma0: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, env = "SENSURV_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub tau_dagger: Option<f64>,
    /// Fixed kernel bandwidth; by default it is chosen per fitted model.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub trunc_percentile: Option<f64>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Clip fitted treatment probabilities to `[floor, 1 − floor]`.
    #[arg(long)]
    pub propensity_floor: Option<f64>,
    /// Parametric bootstrap replicates; 0 disables the bootstrap.
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
    /// Also write every bootstrap replicate's estimates.
    #[arg(long)]
    pub bootstrap_dump: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON study configuration; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Magnitudes of the sensitivity parameter; the treated arm uses `+|γ|`
    /// and the control arm `−|γ|`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub sample_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub s_points: Option<Vec<f64>>,
    #[arg(long, env = "SENSURV_SEED")]
    pub seed: Option<u64>,
    /// Bootstrap replicates per simulated dataset.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Replace the estimator by the true values.
    #[arg(long)]
    pub oracle_self_test: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub trunc_percentile: Option<f64>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub pool_seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] crate::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid configuration file {path}: {message}")]
    Config { path: String, message: String },
    #[error("cannot start worker pool: {0}")]
    Workers(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lib(e) => e.exit_code(),
            CliError::Write { .. } | CliError::Read { .. } | CliError::Config { .. } => 3,
            CliError::Workers(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Lib(e) => e.kind(),
            CliError::Write { .. } | CliError::Read { .. } => "io",
            CliError::Config { .. } => "config",
            CliError::Workers(_) => "usage",
        }
    }

    /// Structured form written to standard error.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() } })
            .to_string()
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Lib(e.into())
    }
}

macro_rules! lib_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Lib(e.into())
            }
        }
    )*};
}
lib_error!(crate::sensitivity::SensitivityError, BootstrapError, crate::sim::SimError);

/// Provenance of one run. The digest covers everything except the clock
/// fields, so identical inputs give identical digests.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seed: u64,
    pub input_digest: Option<String>,
    pub outputs: Vec<String>,
    pub digest: String,
    pub started_at_unix: u64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    fn new(command: &'static str, config: serde_json::Value, seed: u64, input_digest: Option<String>, outputs: &[&str]) -> Self {
        let outputs: Vec<String> = outputs.iter().map(|s| s.to_string()).collect();
        let core = serde_json::json!({
            "tool": "sensurv",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": config,
            "seed": seed,
            "input_digest": input_digest,
            "outputs": outputs,
        });
        let digest = sha256_hex(core.to_string().as_bytes());
        RunManifest {
            tool: "sensurv",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            seed,
            input_digest,
            outputs,
            digest,
            started_at_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_seconds: 0.0,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Workers("--workers must be positive".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| CliError::Workers(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(s) => cmd_simulate(s),
    })
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Read { path: path.display().to_string(), source })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Write { path: path.display().to_string(), source })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Config { path: path.display().to_string(), message: e.to_string() })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Resolve the analysis configuration: file, then explicit flags.
pub fn resolve_study_config(a: &AnalyzeArgs) -> Result<StudyConfig, CliError> {
    let mut c: StudyConfig = match &a.config {
        Some(p) => parse_json(p)?,
        None => StudyConfig::default(),
    };
    if let Some(v) = &a.s_grid {
        c.s_grid = v.clone();
    }
    if let Some(v) = &a.gamma1 {
        c.gamma1 = v.clone();
    }
    if let Some(v) = &a.gamma0 {
        c.gamma0 = v.clone();
    }
    c.folds = a.folds.unwrap_or(c.folds);
    c.seed = a.seed.unwrap_or(c.seed);
    c.tau = a.tau.unwrap_or(c.tau);
    c.tau_dagger = a.tau_dagger.unwrap_or(c.tau_dagger);
    c.bandwidth = a.bandwidth.or(c.bandwidth);
    c.trunc_percentile = a.trunc_percentile.unwrap_or(c.trunc_percentile);
    c.grid_size = a.grid_size.unwrap_or(c.grid_size);
    c.propensity_floor = a.propensity_floor.unwrap_or(c.propensity_floor);
    c.validate()?;
    Ok(c)
}

fn estimates_csv(digest: &str, analysis: &Analysis) -> String {
    let mut out = format!("# manifest_digest={digest}\narm,s,gamma,psi,sigma,sigma_boot,ci_lo,ci_hi,n_truncated,clipped_flag\n");
    for e in &analysis.estimates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            e.arm,
            e.s,
            e.gamma,
            e.psi,
            e.sigma,
            opt(e.sigma_boot),
            e.ci_lo,
            e.ci_hi,
            e.n_truncated,
            u8::from(e.clipped)
        );
    }
    out
}

fn induced_csv(digest: &str, analysis: &Analysis) -> String {
    let mut out = format!(
        "# manifest_digest={digest}\narm,s,gamma,marginal_surv,same_arm_surv,induced_surv,induced_raw,clipped_flag\n"
    );
    for r in &analysis.induced {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.arm,
            r.s,
            r.gamma,
            r.marginal_surv,
            r.same_arm_surv,
            r.induced.value,
            r.induced.raw,
            u8::from(r.induced.clipped)
        );
    }
    out
}

fn contour_csv(digest: &str, analysis: &Analysis) -> String {
    let mut out = format!("# manifest_digest={digest}\ns,gamma1,gamma0,diff,se,ci_lo,ci_hi\n");
    for c in &analysis.contour {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", c.s, c.gamma1, c.gamma0, c.diff, c.se, c.ci_lo, c.ci_hi);
    }
    out
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let study = resolve_study_config(a)?;
    let spec_bytes = read(&a.spec)?;
    let spec = DesignSpec::from_json(&String::from_utf8_lossy(&spec_bytes))?;
    let input_bytes = read(&a.input)?;
    let dataset = load_csv(&a.input, &spec)?;
    let records: Vec<_> = dataset.records.iter().map(|r| r.truncated(study.tau_dagger)).collect();
    let groups = dataset.encoder.groups();
    let cfg = EstimatorConfig::from_study(&study);
    let gammas = [study.gamma0.as_slice(), study.gamma1.as_slice()];
    let mut analysis = analyze(&records, &groups, &cfg, &study.s_grid, gammas)?;

    let mut dump = None;
    if a.bootstrap > 0 {
        let mech = fitted_mechanism(&records, &groups, &cfg)?;
        let plan = BootstrapPlan::new(a.bootstrap, derive_seed(study.seed, u64::MAX))?;
        let boot = parametric_bootstrap(&mech, records.len(), &plan, &cfg, &study.s_grid, gammas)?;
        for (e, v) in analysis.estimates.iter_mut().zip(&boot.variance) {
            e.set_bootstrap(v.sqrt());
        }
        if a.bootstrap_dump {
            let mut out = String::from("replicate");
            for e in &analysis.estimates {
                let _ = write!(out, ",psi_{}_{}_{}", e.arm, e.s, e.gamma);
            }
            out.push('\n');
            for (i, v) in &boot.values {
                let _ = write!(out, "{i}");
                for x in v {
                    let _ = write!(out, ",{x}");
                }
                out.push('\n');
            }
            dump = Some(out);
        }
    }

    let mut input_hash = Sha256::new();
    input_hash.update(&input_bytes);
    input_hash.update(&spec_bytes);
    let input_digest = hex::encode(input_hash.finalize());
    let mut outputs = vec!["out.json", "estimates.csv", "induced.csv", "contour.csv"];
    if dump.is_some() {
        outputs.push("bootstrap_replicates.csv");
    }
    let config = serde_json::json!({
        "study": study,
        "estimator": cfg,
        "bootstrap_replicates": a.bootstrap,
        "design": spec,
        "encoding": dataset.encoder,
    });
    let mut manifest = RunManifest::new("analyze", config, study.seed, Some(input_digest), &outputs);
    let digest = manifest.digest.clone();

    fs::create_dir_all(&a.out_dir).map_err(|source| CliError::Write { path: a.out_dir.display().to_string(), source })?;
    let out = serde_json::json!({ "manifest_digest": digest, "analysis": analysis });
    write(&a.out_dir, "out.json", &serde_json::to_string_pretty(&out).expect("analysis serialises"))?;
    write(&a.out_dir, "estimates.csv", &estimates_csv(&digest, &analysis))?;
    write(&a.out_dir, "induced.csv", &induced_csv(&digest, &analysis))?;
    write(&a.out_dir, "contour.csv", &contour_csv(&digest, &analysis))?;
    if let Some(d) = dump {
        write(&a.out_dir, "bootstrap_replicates.csv", &format!("# manifest_digest={digest}\n{d}"))?;
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write(&a.out_dir, "manifest.json", &serde_json::to_string_pretty(&manifest).expect("manifest serialises"))?;
    Ok(())
}

/// Resolve the study configuration: file, then explicit flags.
pub fn resolve_sim_config(s: &SimulateArgs) -> Result<(SimStudyConfig, SyntheticParams), CliError> {
    let mut c: SimStudyConfig = match &s.config {
        Some(p) => parse_json(p)?,
        None => SimStudyConfig::default(),
    };
    if let Some(v) = &s.gammas {
        c.gammas = v.clone();
    }
    if let Some(v) = &s.sample_sizes {
        c.sample_sizes = v.clone();
    }
    if let Some(v) = &s.s_points {
        c.s_points = v.clone();
    }
    c.replicates = s.replicates.unwrap_or(c.replicates);
    c.seed = s.seed.unwrap_or(c.seed);
    c.bootstrap = s.bootstrap.or(c.bootstrap);
    c.oracle_self_test |= s.oracle_self_test;
    c.folds = s.folds.unwrap_or(c.folds);
    c.grid_size = s.grid_size.unwrap_or(c.grid_size);
    c.trunc_percentile = s.trunc_percentile.unwrap_or(c.trunc_percentile);
    let mut params = SyntheticParams::default();
    params.pool_size = s.pool_size.unwrap_or(params.pool_size);
    params.pool_seed = s.pool_seed.unwrap_or(params.pool_seed);
    Ok((c, params))
}

pub fn sim_csv(digest: &str, result: &SimStudyResult) -> String {
    let mut out = format!(
        "# manifest_digest={digest}\nn,arm,gamma,s,true_psi,mean_psi,bias,mc_se,wald_coverage,boot_coverage,replicates,failures\n"
    );
    for c in &result.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.n,
            c.arm,
            c.gamma,
            c.s,
            c.true_psi,
            c.mean_psi,
            c.bias,
            if c.mc_se.is_finite() { c.mc_se.to_string() } else { "NA".into() },
            opt(c.wald_coverage),
            opt(c.boot_coverage),
            c.replicates,
            c.failures
        );
    }
    out
}

pub fn cmd_simulate(s: &SimulateArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let (cfg, params) = resolve_sim_config(s)?;
    let mech = GeneratingMechanism::synthetic_prostate(&params)?;
    let result = run_study(&mech, &cfg)?;
    let config = serde_json::json!({ "study": cfg, "mechanism": params });
    let mut manifest = RunManifest::new("simulate", config, cfg.seed, None, &["sim.csv", "sim.json"]);
    let digest = manifest.digest.clone();
    fs::create_dir_all(&s.out_dir).map_err(|source| CliError::Write { path: s.out_dir.display().to_string(), source })?;
    write(&s.out_dir, "sim.csv", &sim_csv(&digest, &result))?;
    let arms: Vec<String> = Arm::BOTH.iter().map(|a| a.to_string()).collect();
    let out = serde_json::json!({ "manifest_digest": digest, "arms": arms, "result": result });
    write(&s.out_dir, "sim.json", &serde_json::to_string_pretty(&out).expect("result serialises"))?;
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write(&s.out_dir, "manifest.json", &serde_json::to_string_pretty(&manifest).expect("manifest serialises"))?;
    Ok(())
}
