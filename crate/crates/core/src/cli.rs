//! Command-line front end.
//!
//! Every subcommand reads one JSON run config, writes its artifacts into the
//! output directory and exits 0 on success, 1 on invalid input and 2 when
//! estimation fails. Failures are also written as `error.json`.

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use crate::bootstrap::{egocentric_bootstrap, BootstrapConfig, BootstrapResult, EstimandInterval, VALIDITY_NOTE};
use crate::data::{load_dataset, summarize_by_treatment, write_dataset, BipartiteDataset, CovariateSchema, DatasetPaths};
use crate::effects::{EffectEstimates, GridSpec, SurfaceScale};
use crate::error::{Error, ErrorReport, Result};
use crate::exposure::{derive_exposures, ExposureTable};
use crate::frame::AnalysisFrame;
use crate::glm::GlmFit;
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use crate::propensity::{balance_table, fit_propensity, PropensitySettings, QuantileBasis, StratifiedPropensityFit, TrimRule};
use crate::synth::{self, SynthConfig};

pub const LOG_ENV: &str = "BIPARTITE_LOG";

#[derive(Debug, Parser)]
#[command(name = "bipartite", version, about = "Direct and upwind effect estimation on bipartite interference networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for the bootstrap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Simulate,
    /// Derive key-associated and upwind treatments.
    Derive,
    /// Propensity scores, strata and covariate balance.
    Balance,
    /// Dose-response surface and effect estimates.
    Fit,
    /// Egocentric bootstrap intervals.
    Bootstrap,
    /// derive, balance, fit and bootstrap, plus a manifest.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Derive => "derive",
            Command::Balance => "balance",
            Command::Fit => "fit",
            Command::Bootstrap => "bootstrap",
            Command::Report => "report",
        }
    }
}

/// Input file locations, relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataFiles {
    pub interventional: PathBuf,
    pub outcome: PathBuf,
    pub interference: PathBuf,
}

impl Default for DataFiles {
    fn default() -> Self {
        let p = DatasetPaths::in_dir(Path::new(""));
        Self { interventional: p.interventional, outcome: p.outcome, interference: p.interference }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub ci_level: f64,
    pub max_failure_rate: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        let d = BootstrapConfig::default();
        Self { replicates: d.replicates, ci_level: d.ci_level, max_failure_rate: d.max_failure_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataFiles,
    pub schema: Option<CovariateSchema>,
    pub strata: usize,
    pub trim: TrimRule,
    pub quantile_basis: QuantileBasis,
    pub grid: GridSpec,
    pub bootstrap: BootstrapSettings,
    /// Keep only outcome units whose total interference weight exceeds this.
    pub eligibility_threshold: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub jobs: usize,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataFiles::default(),
            schema: None,
            strata: PropensitySettings::default().strata,
            trim: TrimRule::default(),
            quantile_basis: QuantileBasis::default(),
            grid: GridSpec::default(),
            bootstrap: BootstrapSettings::default(),
            eligibility_threshold: None,
            output_dir: None,
            seed: 1,
            jobs: 1,
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            propensity: PropensitySettings { strata: self.strata, trim: self.trim, quantile_basis: self.quantile_basis },
            grid: self.grid,
        }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.bootstrap.replicates,
            seed: self.seed,
            ci_level: self.bootstrap.ci_level,
            jobs: self.jobs,
            max_failure_rate: self.bootstrap.max_failure_rate,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.strata < 1 {
            return Err(Error::Config("strata must be at least 1".into()));
        }
        if !(0.0..=0.05).contains(&self.trim.alpha) {
            return Err(Error::Config(format!("trim.alpha = {} (need 0 <= alpha <= 0.05)", self.trim.alpha)));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if let Some(t) = self.eligibility_threshold {
            if !t.is_finite() {
                return Err(Error::Config("eligibility_threshold must be finite".into()));
            }
        }
        self.grid.points()?;
        self.bootstrap_config().validate()?;
        Ok(())
    }
}

/// Config plus the directories it resolves against.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Resolved {
    pub fn dataset_paths(&self) -> DatasetPaths {
        DatasetPaths {
            interventional: self.base_dir.join(&self.config.data.interventional),
            outcome: self.base_dir.join(&self.config.data.outcome),
            interference: self.base_dir.join(&self.config.data.interference),
        }
    }
}

fn resolve(cli: &Cli) -> Result<Resolved> {
    let (mut config, base_dir) = match &cli.config {
        Some(path) => (RunConfig::from_json_file(path)?, path.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (RunConfig::default(), PathBuf::new()),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    let out_dir = match (&cli.out, &config.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base_dir.join(o),
        (None, None) => return Err(Error::Config("no output directory: pass --out or set output_dir".into())),
    };
    config.validate()?;
    Ok(Resolved { config, base_dir, out_dir })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Loaded dataset (after the eligibility filter) with its exposures and frame.
pub struct Prepared {
    pub dataset: BipartiteDataset,
    pub exposures: ExposureTable,
    pub frame: AnalysisFrame,
}

pub fn prepare(r: &Resolved) -> Result<Prepared> {
    let schema = r.config.schema.clone().ok_or_else(|| Error::Config("config has no `schema`".into()))?;
    let mut dataset = load_dataset(&r.dataset_paths(), &schema)?;
    if let Some(t) = r.config.eligibility_threshold {
        let keep = dataset.eligible_by_total_weight(t);
        let n_keep = keep.iter().filter(|&&k| k).count();
        log::info!("eligibility threshold {t} keeps {n_keep} of {} outcome units", dataset.n_outcome());
        dataset = dataset.restrict_outcome_units(&keep)?;
    }
    let exposures = derive_exposures(&dataset)?;
    let frame = AnalysisFrame::build(&dataset, &exposures)?;
    Ok(Prepared { dataset, exposures, frame })
}

fn write_derive(p: &Prepared, out: &Path) -> Result<Vec<&'static str>> {
    let path = out.join("exposures.csv");
    p.exposures.write_csv(&path).map_err(io_err(&path))?;
    summarize_by_treatment(&p.dataset, &p.exposures)?.write_csv(&out.join("covariate_summary.csv"))?;
    Ok(vec!["exposures.csv", "covariate_summary.csv"])
}

#[derive(Debug, Serialize)]
struct StratificationSummary<'a> {
    n_units: usize,
    n_kept: usize,
    k: usize,
    cutpoints: &'a [f64],
    counts: &'a [usize],
    weights: &'a [f64],
    phi_model: &'a GlmFit,
    upwind_models: &'a [GlmFit],
    mean_abs_smd_unadjusted: f64,
    mean_abs_smd_stratified: f64,
}

fn write_balance(frame: &AnalysisFrame, ps: &StratifiedPropensityFit, out: &Path) -> Result<Vec<&'static str>> {
    if ps.phi_fit.separation {
        log::warn!("key-associated propensity model shows separation; inspect overlap trimming");
    }
    let table = balance_table(frame, ps);
    let path = out.join("balance.csv");
    table.write_csv(&path).map_err(io_err(&path))?;
    let (unadj, strat) = table.mean_abs(&frame.balance_names);
    let summary = StratificationSummary {
        n_units: frame.len(),
        n_kept: ps.n_kept(),
        k: ps.strata.k,
        cutpoints: &ps.strata.cutpoints,
        counts: &ps.strata.counts,
        weights: &ps.strata.weights,
        phi_model: &ps.phi_fit,
        upwind_models: &ps.lambda_fits,
        mean_abs_smd_unadjusted: unadj,
        mean_abs_smd_stratified: strat,
    };
    write_json(&out.join("stratification.json"), &summary)?;
    Ok(vec!["balance.csv", "stratification.json"])
}

/// Layout of `estimands.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandsRecord {
    pub scale: SurfaceScale,
    pub n_units: usize,
    pub n_kept: usize,
    pub g_grid: Vec<f64>,
    pub tau_of_g: Vec<f64>,
    pub tau: f64,
    pub delta_z0: Vec<f64>,
    pub delta_z1: Vec<f64>,
    #[serde(rename = "Delta0")]
    pub delta0: f64,
    #[serde(rename = "Delta1")]
    pub delta1: f64,
    pub stratum_weights: Vec<f64>,
    pub extrapolation_fraction: Vec<f64>,
}

impl EstimandsRecord {
    pub fn new(out: &PipelineOutput, n_units: usize) -> Self {
        let e: &EffectEstimates = &out.estimates;
        Self {
            scale: out.surface.scale,
            n_units,
            n_kept: out.propensity.n_kept(),
            g_grid: e.g_grid.clone(),
            tau_of_g: e.tau_of_g.clone(),
            tau: e.tau,
            delta_z0: e.delta[0].clone(),
            delta_z1: e.delta[1].clone(),
            delta0: e.delta0,
            delta1: e.delta1,
            stratum_weights: out.surface.stratum_weights.clone(),
            extrapolation_fraction: out.surface.extrapolation_fraction.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ModelsRecord<'a> {
    phi_model: &'a GlmFit,
    upwind_models: &'a [GlmFit],
    outcome_models: &'a [GlmFit],
}

fn write_fit(out_fit: &PipelineOutput, n_units: usize, out: &Path) -> Result<Vec<&'static str>> {
    let s = &out_fit.surface;
    let path = out.join("surface.csv");
    s.write_strata_csv(&path).map_err(io_err(&path))?;
    let path = out.join("pooled_surface.csv");
    s.write_pooled_csv(&path).map_err(io_err(&path))?;
    write_json(&out.join("estimands.json"), &EstimandsRecord::new(out_fit, n_units))?;
    let models = ModelsRecord {
        phi_model: &out_fit.propensity.phi_fit,
        upwind_models: &out_fit.propensity.lambda_fits,
        outcome_models: &out_fit.outcome_fits,
    };
    write_json(&out.join("models.json"), &models)?;
    for (k, f) in s.extrapolation_fraction.iter().enumerate() {
        if *f > 0.0 {
            log::info!("stratum {}: {:.0}% of grid points lie outside its observed upwind range", k + 1, 100.0 * f);
        }
    }
    Ok(vec!["surface.csv", "pooled_surface.csv", "estimands.json", "models.json"])
}

#[derive(Debug, Serialize)]
struct GridInterval {
    g: f64,
    #[serde(flatten)]
    interval: EstimandInterval,
}

#[derive(Debug, Serialize)]
struct CiRecord<'a> {
    note: &'static str,
    ci_level: f64,
    replicates: usize,
    n_failed: usize,
    seed: u64,
    tau: &'a EstimandInterval,
    #[serde(rename = "Delta0")]
    delta0: &'a EstimandInterval,
    #[serde(rename = "Delta1")]
    delta1: &'a EstimandInterval,
    tau_of_g: Vec<GridInterval>,
    failures: &'a [crate::bootstrap::ReplicateFailure],
}

fn write_bootstrap(b: &BootstrapResult, seed: u64, out: &Path) -> Result<Vec<&'static str>> {
    let record = CiRecord {
        note: VALIDITY_NOTE,
        ci_level: b.ci_level,
        replicates: b.replicates,
        n_failed: b.n_failed,
        seed,
        tau: &b.tau,
        delta0: &b.delta0,
        delta1: &b.delta1,
        tau_of_g: b.g_grid.iter().zip(&b.tau_of_g).map(|(&g, iv)| GridInterval { g, interval: iv.clone() }).collect(),
        failures: &b.failures,
    };
    write_json(&out.join("estimands_ci.json"), &record)?;
    let path = out.join("curves_ci.csv");
    b.write_curves_csv(&path).map_err(io_err(&path))?;
    eprintln!("note: {VALIDITY_NOTE}");
    Ok(vec!["estimands_ci.json", "curves_ci.csv"])
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub jobs: usize,
    pub config_sha256: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

fn manifest(r: &Resolved, command: Command, outputs: &[&str]) -> Result<Manifest> {
    // the output location is not part of what determines the results
    let mut config = r.config.clone();
    config.output_dir = None;
    let canonical = serde_json::to_string(&config).map_err(|e| Error::Config(e.to_string()))?;
    let paths = r.dataset_paths();
    let mut inputs = Vec::new();
    for (name, path) in [
        (&config.data.interventional, &paths.interventional),
        (&config.data.outcome, &paths.outcome),
        (&config.data.interference, &paths.interference),
    ] {
        inputs.push(FileDigest { file: name.display().to_string(), sha256: sha256_file(path)? });
    }
    let mut outs = Vec::new();
    let mut names: Vec<&str> = outputs.to_vec();
    names.sort_unstable();
    for name in names {
        outs.push(FileDigest { file: name.to_string(), sha256: sha256_file(&r.out_dir.join(name))? });
    }
    Ok(Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.name().to_string(),
        seed: config.seed,
        jobs: config.jobs,
        config_sha256: hex(&Sha256::digest(canonical.as_bytes())),
        config,
        inputs,
        outputs: outs,
    })
}

fn print_estimates(e: &EffectEstimates) {
    println!("tau     {:.6}", e.tau);
    println!("Delta0  {:.6}", e.delta0);
    println!("Delta1  {:.6}", e.delta1);
}

#[derive(Debug, Serialize)]
struct GroundTruthRecord<'a> {
    #[serde(flatten)]
    truth: &'a synth::GroundTruth,
    /// Estimands over all generated outcome units, before any trimming.
    true_estimands: EffectEstimates,
}

fn simulate(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    config.synth.seed = config.seed;
    let out = cli.out.clone().ok_or_else(|| Error::Config("simulate needs --out".into()))?;
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let generated = synth::generate(&config.synth)?;
    let paths = write_dataset(&generated.dataset, &out)?;
    let grid = config.grid.points()?;
    let truth = GroundTruthRecord {
        truth: &generated.ground_truth,
        true_estimands: synth::true_estimands(&generated.ground_truth, None, &grid)?,
    };
    write_json(&out.join("ground_truth.json"), &truth)?;
    let name = |p: &Path| PathBuf::from(p.file_name().unwrap_or_default());
    let run = RunConfig {
        data: DataFiles { interventional: name(&paths.interventional), outcome: name(&paths.outcome), interference: name(&paths.interference) },
        schema: Some(generated.dataset.schema.clone()),
        output_dir: Some(PathBuf::from("results")),
        ..config
    };
    write_json(&out.join("run_config.json"), &run)?;
    log::info!(
        "simulated {} outcome units and {} interventional units into {}",
        generated.dataset.n_outcome(),
        generated.dataset.n_interventional(),
        out.display()
    );
    Ok(())
}

/// Executes one parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    if cli.command == Command::Simulate {
        return simulate(cli);
    }
    let r = resolve(cli)?;
    std::fs::create_dir_all(&r.out_dir).map_err(io_err(&r.out_dir))?;
    let p = prepare(&r)?;
    let out = r.out_dir.as_path();
    let pipeline = r.config.pipeline();
    match cli.command {
        Command::Simulate => unreachable!(),
        Command::Derive => {
            write_derive(&p, out)?;
        }
        Command::Balance => {
            let ps = fit_propensity(&p.frame, &pipeline.propensity)?;
            write_balance(&p.frame, &ps, out)?;
        }
        Command::Fit => {
            let fit = run_pipeline(&p.frame, &pipeline)?;
            write_fit(&fit, p.frame.len(), out)?;
            print_estimates(&fit.estimates);
        }
        Command::Bootstrap => {
            let (_, b) = egocentric_bootstrap(&p.frame, &pipeline, &r.config.bootstrap_config())?;
            write_bootstrap(&b, r.config.seed, out)?;
        }
        Command::Report => {
            let mut files = write_derive(&p, out)?;
            let (fit, b) = egocentric_bootstrap(&p.frame, &pipeline, &r.config.bootstrap_config())?;
            files.extend(write_balance(&p.frame, &fit.propensity, out)?);
            files.extend(write_fit(&fit, p.frame.len(), out)?);
            files.extend(write_bootstrap(&b, r.config.seed, out)?);
            write_json(&out.join("manifest.json"), &manifest(&r, cli.command, &files)?)?;
            print_estimates(&fit.estimates);
        }
    }
    Ok(())
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    // a second initialisation (tests, repeated calls) is harmless
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            if code != 0 {
                let report = ErrorReport { code: "cli.usage".into(), message: e.kind().to_string(), exit_code: 1 };
                eprintln!("{}", serde_json::to_string(&report).unwrap_or_default());
            }
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let report = ErrorReport::from(&e);
            let json = serde_json::to_string(&report).unwrap_or_default();
            eprintln!("{json}");
            if let Some(dir) = error_dir(&cli) {
                if std::fs::create_dir_all(&dir).is_ok() {
                    let _ = std::fs::write(dir.join("error.json"), format!("{json}\n"));
                }
            }
            report.exit_code
        }
    }
}

fn error_dir(cli: &Cli) -> Option<PathBuf> {
    if let Some(o) = &cli.out {
        return Some(o.clone());
    }
    let path = cli.config.as_ref()?;
    let cfg = RunConfig::from_json_file(path).ok()?;
    Some(path.parent().unwrap_or(Path::new("")).join(cfg.output_dir?))
}
