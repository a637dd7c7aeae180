//! Egocentric bootstrap: outcome units are resampled with replacement and
//! carry their derived exposures and covariates unchanged into every replicate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Display;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

use crate::frame::AnalysisFrame;
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineError, PipelineOutput};
use crate::stats::{mean, quantile_sorted, sample_variance};

/// Caveat attached to every bootstrap artifact.
pub const VALIDITY_NOTE: &str = "intervals resample outcome units with their network-derived exposures held fixed; \
their validity under bipartite interference is not guaranteed";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error("invalid bootstrap setting: {0}")]
    InvalidConfig(String),
    #[error("{failed} of {replicates} replicates failed (limit {limit})")]
    TooManyFailures { failed: usize, replicates: usize, limit: f64 },
    #[error("estimate on the original sample failed: {0}")]
    Original(PipelineError),
    #[error("could not start worker pool: {0}")]
    ThreadPool(String),
}

impl BootstrapError {
    pub fn code(&self) -> &'static str {
        match self {
            BootstrapError::InvalidConfig(_) => "invalid_config",
            BootstrapError::TooManyFailures { .. } => "too_many_failures",
            BootstrapError::Original(_) => "original_estimate",
            BootstrapError::ThreadPool(_) => "thread_pool",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub ci_level: f64,
    /// Worker threads; results do not depend on it.
    #[serde(skip)]
    pub jobs: usize,
    pub max_failure_rate: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 500, seed: 0, ci_level: 0.95, jobs: 1, max_failure_rate: 0.2 }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), BootstrapError> {
        if self.replicates < 2 {
            return Err(BootstrapError::InvalidConfig(format!("replicates = {} (need at least 2)", self.replicates)));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(BootstrapError::InvalidConfig(format!("ci_level = {} (need 0 < level < 1)", self.ci_level)));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(BootstrapError::InvalidConfig(format!("max_failure_rate = {}", self.max_failure_rate)));
        }
        if self.jobs == 0 {
            return Err(BootstrapError::InvalidConfig("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Row indices for replicate `r`: `n` draws with replacement from the
/// stream `(seed, r)`, independent of how replicates are scheduled.
pub fn replicate_indices(seed: u64, r: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(r);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

/// Replicate statistics in replicate order; failed replicates are absent
/// from `values` and listed in `failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSet {
    pub replicates: usize,
    pub values: Vec<Vec<f64>>,
    pub failures: Vec<ReplicateFailure>,
}

/// Runs `stat` on `cfg.replicates` resamples of `0..n` on a pool of `cfg.jobs` threads.
pub fn run_replicates<E, F>(n: usize, cfg: &BootstrapConfig, stat: F) -> Result<ReplicateSet, BootstrapError>
where
    E: Display,
    F: Fn(&[usize]) -> Result<Vec<f64>, E> + Sync,
{
    cfg.validate()?;
    if n == 0 {
        return Err(BootstrapError::InvalidConfig("no units to resample".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| BootstrapError::ThreadPool(e.to_string()))?;
    let outcomes: Vec<Result<Vec<f64>, String>> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let idx = replicate_indices(cfg.seed, r as u64, n);
                match stat(&idx) {
                    Ok(v) if v.iter().all(|x| x.is_finite()) => Ok(v),
                    Ok(_) => Err("non-finite statistic".to_string()),
                    Err(e) => Err(e.to_string()),
                }
            })
            .collect()
    });
    let mut values = Vec::with_capacity(cfg.replicates);
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => values.push(v),
            Err(error) => {
                log::debug!("bootstrap replicate {r} failed: {error}");
                failures.push(ReplicateFailure { replicate: r, error });
            }
        }
    }
    let failed = failures.len();
    if failed as f64 / cfg.replicates as f64 > cfg.max_failure_rate || values.is_empty() {
        return Err(BootstrapError::TooManyFailures { failed, replicates: cfg.replicates, limit: cfg.max_failure_rate });
    }
    if failed > 0 {
        log::warn!("{failed} of {} bootstrap replicates failed and were excluded", cfg.replicates);
    }
    Ok(ReplicateSet { replicates: cfg.replicates, values, failures })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Replicate standard deviation.
    pub sd: f64,
}

/// Percentile intervals at `(1 - level)/2` and `(1 + level)/2` for every
/// coordinate of the replicate statistics.
pub fn percentile_intervals(values: &[Vec<f64>], ci_level: f64) -> Vec<Interval> {
    let Some(first) = values.first() else { return Vec::new() };
    // 1 - 0.9 is not exactly 0.1; snap so nominal levels hit their order statistics
    let snap = |p: f64| (p * 1e12).round() / 1e12;
    let lo_p = snap((1.0 - ci_level) / 2.0);
    let hi_p = snap((1.0 + ci_level) / 2.0);
    (0..first.len())
        .map(|c| {
            let mut col: Vec<f64> = values.iter().map(|v| v[c]).collect();
            let sd = sample_variance(&col).sqrt();
            col.sort_by(f64::total_cmp);
            Interval { lo: quantile_sorted(&col, lo_p), hi: quantile_sorted(&col, hi_p), sd }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub ci_level: f64,
    pub replicates: usize,
    pub n_failed: usize,
    pub failures: Vec<ReplicateFailure>,
    pub tau: EstimandInterval,
    pub delta0: EstimandInterval,
    pub delta1: EstimandInterval,
    pub g_grid: Vec<f64>,
    /// Pooled curve bands `mu[z][t]`.
    pub mu: [Vec<EstimandInterval>; 2],
    pub tau_of_g: Vec<EstimandInterval>,
    /// Mean of the replicate `tau` values, for bias diagnostics.
    pub replicate_mean_tau: f64,
}

/// Statistic layout shared by the pipeline and the bootstrap:
/// `[tau, delta0, delta1, mu(0, ·), mu(1, ·), tau(·)]`.
pub fn statistic_vector(out: &PipelineOutput) -> Vec<f64> {
    let e = &out.estimates;
    let mut v = vec![e.tau, e.delta0, e.delta1];
    v.extend_from_slice(&out.surface.pooled[0]);
    v.extend_from_slice(&out.surface.pooled[1]);
    v.extend_from_slice(&e.tau_of_g);
    v
}

fn assemble(point: &[f64], intervals: &[Interval]) -> Vec<EstimandInterval> {
    point
        .iter()
        .zip(intervals)
        .map(|(&estimate, iv)| EstimandInterval { estimate, lo: iv.lo, hi: iv.hi, sd: iv.sd })
        .collect()
}

/// Point estimate on the full frame plus the egocentric bootstrap around it.
pub fn egocentric_bootstrap(
    frame: &AnalysisFrame,
    pipeline: &PipelineConfig,
    cfg: &BootstrapConfig,
) -> Result<(PipelineOutput, BootstrapResult), BootstrapError> {
    cfg.validate()?;
    let original = run_pipeline(frame, pipeline).map_err(BootstrapError::Original)?;
    let point = statistic_vector(&original);
    let set = run_replicates(frame.len(), cfg, |idx| run_pipeline(&frame.resample(idx), pipeline).map(|o| statistic_vector(&o)))?;
    let iv = assemble(&point, &percentile_intervals(&set.values, cfg.ci_level));
    let m = original.surface.g_grid.len();
    let taus: Vec<f64> = set.values.iter().map(|v| v[0]).collect();
    let result = BootstrapResult {
        ci_level: cfg.ci_level,
        replicates: set.replicates,
        n_failed: set.failures.len(),
        failures: set.failures,
        tau: iv[0].clone(),
        delta0: iv[1].clone(),
        delta1: iv[2].clone(),
        g_grid: original.surface.g_grid.clone(),
        mu: [iv[3..3 + m].to_vec(), iv[3 + m..3 + 2 * m].to_vec()],
        tau_of_g: iv[3 + 2 * m..3 + 3 * m].to_vec(),
        replicate_mean_tau: mean(&taus),
    };
    Ok((original, result))
}

impl BootstrapResult {
    /// Writes `z,g,mu,lo,hi` rows for both pooled curves.
    pub fn write_curves_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::from("z,g,mu,lo,hi\n");
        for (z, curve) in self.mu.iter().enumerate() {
            for (g, e) in self.g_grid.iter().zip(curve) {
                out.push_str(&format!("{z},{g},{},{},{}\n", e.estimate, e.lo, e.hi));
            }
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())
    }
}
