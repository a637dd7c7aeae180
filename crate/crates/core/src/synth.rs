//! Synthetic bipartite datasets with a plume-kernel interference map and a
//! known outcome process.
//!
//! Sources and receptors sit in a square. Covariates on both sides share
//! smooth spatial fields, so a receptor's covariates are correlated with
//! those of its upwind sources. Source treatment depends on source
//! covariates and the outcome depends on receptor covariates, which is what
//! confounds the naive comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Bernoulli, Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BipartiteDataset, CovariateSchema, InterferenceMap, InterventionalUnit, OutcomeFamily, OutcomeUnit};
use crate::effects::{self, EffectEstimates, EffectsError, RATE_DENOMINATOR};
use crate::exposure::{derive_from_map, empirical_g_distribution, rescale_by_max};

/// Entries below this fraction of their row maximum are dropped.
pub const SPARSITY_RATIO: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("receptor {0} receives no positive weight from any source")]
    EmptyRow(usize),
    #[error("{0}")]
    Internal(String),
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            SynthError::InvalidConfig(_) => "invalid_config",
            SynthError::EmptyRow(_) => "empty_row",
            SynthError::Internal(_) => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_outcome: usize,
    pub n_interventional: usize,
    /// Side of the square domain (km).
    pub extent: f64,
    /// Plume spread (km).
    pub sigma: f64,
    /// Transport displacement applied to every source (km).
    pub drift: [f64; 2],
    /// Log-scale sd of the per-source emission scalar.
    pub emission_log_sd: f64,
    /// Correlation length of the shared covariate fields (km).
    pub field_length: f64,
    /// Random Fourier features per field.
    pub field_features: usize,
    /// Loading of each covariate on its spatial field, in [0, 1].
    pub field_loading: f64,
    pub n_int_covariates: usize,
    pub n_out_covariates: usize,
    /// Source treatment log-odds: intercept then one slope per interventional covariate.
    pub treatment_intercept: f64,
    pub treatment_coefficients: Vec<f64>,
    pub family: OutcomeFamily,
    /// Log rate per person-year (Poisson) or mean (normal).
    pub beta0: f64,
    pub beta_z: f64,
    pub beta_g: f64,
    /// One coefficient per outcome covariate.
    pub beta_x: Vec<f64>,
    /// Added to `beta_z` and `beta_g` for receptors whose key-associated
    /// source has a positive first covariate.
    pub beta_z_modifier: f64,
    pub beta_g_modifier: f64,
    /// Person-years at risk: log-normal with this median and log-sd.
    pub person_years_median: f64,
    pub person_years_log_sd: f64,
    /// Residual sd for the normal family.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_outcome: 5000,
            n_interventional: 60,
            extent: 1000.0,
            sigma: 80.0,
            drift: [60.0, 20.0],
            emission_log_sd: 0.5,
            field_length: 300.0,
            field_features: 32,
            field_loading: 0.8,
            n_int_covariates: 2,
            n_out_covariates: 2,
            treatment_intercept: 0.0,
            treatment_coefficients: vec![1.0, -0.5],
            family: OutcomeFamily::PoissonOffset,
            beta0: (50.0 / RATE_DENOMINATOR).ln(),
            beta_z: -0.3,
            beta_g: -0.8,
            beta_x: vec![0.3, -0.2],
            beta_z_modifier: 0.0,
            beta_g_modifier: 0.0,
            person_years_median: 5000.0,
            person_years_log_sd: 0.5,
            noise_sd: 1.0,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_outcome == 0 {
            return bad("n_outcome must be positive".into());
        }
        if self.n_interventional < 2 {
            return bad(format!("n_interventional = {} (need at least 2)", self.n_interventional));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma = {} (need sigma > 0)", self.sigma));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad(format!("extent = {}", self.extent));
        }
        if !(self.field_length > 0.0) || self.field_features == 0 {
            return bad("field_length and field_features must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.field_loading) {
            return bad(format!("field_loading = {} (need [0, 1])", self.field_loading));
        }
        if self.n_int_covariates == 0 {
            return bad("need at least one interventional covariate".into());
        }
        if self.treatment_coefficients.len() != self.n_int_covariates {
            return bad(format!("{} treatment coefficients for {} covariates", self.treatment_coefficients.len(), self.n_int_covariates));
        }
        if self.beta_x.len() != self.n_out_covariates {
            return bad(format!("{} outcome coefficients for {} covariates", self.beta_x.len(), self.n_out_covariates));
        }
        if !(self.person_years_median > 0.0) || !(self.person_years_log_sd >= 0.0) || !(self.emission_log_sd >= 0.0) {
            return bad("person-years and emission scales must be positive".into());
        }
        if self.family == OutcomeFamily::Normal && !(self.noise_sd > 0.0) {
            return bad("noise_sd must be positive".into());
        }
        let finite = [self.beta0, self.beta_z, self.beta_g, self.beta_z_modifier, self.beta_g_modifier, self.treatment_intercept];
        if finite.iter().chain(&self.beta_x).chain(&self.treatment_coefficients).any(|v| !v.is_finite()) {
            return bad("coefficients must be finite".into());
        }
        Ok(())
    }

    pub fn int_names(&self) -> Vec<String> {
        (1..=self.n_int_covariates).map(|c| format!("u{c}")).collect()
    }

    pub fn out_names(&self) -> Vec<String> {
        (1..=self.n_out_covariates).map(|c| format!("x{c}")).collect()
    }

    /// Correctly specified roles: source covariates drive treatment,
    /// receptor covariates enter the upwind and outcome models.
    pub fn default_schema(&self) -> CovariateSchema {
        CovariateSchema {
            x_int_z: self.int_names(),
            x_out_z: self.out_names(),
            x_int_g: Vec::new(),
            x_out_g: self.out_names(),
            x_out_outcome: self.out_names(),
            family: self.family,
        }
    }
}

/// Weight of a source with emission `e` at `source` on a receptor at `receptor`.
pub fn plume_weight(e: f64, receptor: [f64; 2], source: [f64; 2], drift: [f64; 2], sigma: f64) -> f64 {
    let dx = receptor[0] - (source[0] + drift[0]);
    let dy = receptor[1] - (source[1] + drift[1]);
    e * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
}

/// Plume-kernel map, dropping entries below [`SPARSITY_RATIO`] of the row maximum.
pub fn plume_map(
    receptors: &[[f64; 2]],
    sources: &[[f64; 2]],
    emissions: &[f64],
    drift: [f64; 2],
    sigma: f64,
) -> Result<InterferenceMap, SynthError> {
    let mut triplets = Vec::new();
    let mut row = vec![0.0; sources.len()];
    for (i, &r) in receptors.iter().enumerate() {
        for (j, (&s, &e)) in sources.iter().zip(emissions).enumerate() {
            row[j] = plume_weight(e, r, s, drift, sigma);
        }
        let max = row.iter().copied().fold(0.0_f64, f64::max);
        if !(max > 0.0) {
            return Err(SynthError::EmptyRow(i));
        }
        let cut = SPARSITY_RATIO * max;
        triplets.extend(row.iter().enumerate().filter(|(_, &w)| w >= cut).map(|(j, &w)| (i, j, w)));
    }
    InterferenceMap::from_triplets(receptors.len(), sources.len(), triplets).map_err(|e| SynthError::Internal(e.to_string()))
}

/// Smooth stationary field with unit marginal variance, built from random
/// Fourier features.
#[derive(Debug, Clone)]
struct SpatialField {
    freq: Vec<[f64; 2]>,
    phase: Vec<f64>,
    scale: f64,
}

impl SpatialField {
    fn draw(rng: &mut ChaCha20Rng, features: usize, length: f64) -> Self {
        let std = Normal::new(0.0, 1.0 / length).expect("positive length");
        let freq = (0..features).map(|_| [std.sample(rng), std.sample(rng)]).collect();
        let phase = (0..features).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        Self { freq, phase, scale: (2.0 / features as f64).sqrt() }
    }

    fn at(&self, p: [f64; 2]) -> f64 {
        self.scale * self.freq.iter().zip(&self.phase).map(|(w, b)| (w[0] * p[0] + w[1] * p[1] + b).cos()).sum::<f64>()
    }
}

/// True outcome process per outcome unit, with the linear predictor split as
/// `base + z_slope * z + g_slope * g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub family: OutcomeFamily,
    pub beta0: f64,
    pub beta_z: f64,
    pub beta_g: f64,
    pub beta_x: Vec<f64>,
    pub beta_z_modifier: f64,
    pub beta_g_modifier: f64,
    /// Rate-scale denominator for the Poisson family.
    pub rate_denominator: f64,
    pub base: Vec<f64>,
    pub z_slope: Vec<f64>,
    pub g_slope: Vec<f64>,
    pub z: Vec<bool>,
    pub g: Vec<f64>,
}

impl GroundTruth {
    /// True mean for unit `i` on the reporting scale.
    pub fn unit_mean(&self, i: usize, z: bool, g: f64) -> f64 {
        let eta = self.base[i] + if z { self.z_slope[i] } else { 0.0 } + self.g_slope[i] * g;
        match self.family {
            OutcomeFamily::PoissonOffset => self.rate_denominator * eta.exp(),
            OutcomeFamily::Normal => eta,
        }
    }

    /// `mu(z, g)` averaged over the units flagged in `mask` (all units when `None`).
    pub fn mu(&self, mask: Option<&[bool]>, z: bool, g: f64) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for i in 0..self.base.len() {
            if mask.map_or(true, |m| m[i]) {
                acc += self.unit_mean(i, z, g);
                n += 1;
            }
        }
        acc / n as f64
    }
}

/// True surface on `grid` with estimands under the same interpolation
/// convention as the estimator, averaged over units in `mask`.
pub fn true_estimands(gt: &GroundTruth, mask: Option<&[bool]>, grid: &[f64]) -> Result<EffectEstimates, EffectsError> {
    let mu = [
        grid.iter().map(|&g| gt.mu(mask, false, g)).collect::<Vec<_>>(),
        grid.iter().map(|&g| gt.mu(mask, true, g)).collect::<Vec<_>>(),
    ];
    let gs: Vec<f64> = (0..gt.g.len()).filter(|&i| mask.map_or(true, |m| m[i])).map(|i| gt.g[i]).collect();
    let gdist = empirical_g_distribution(&gs).map_err(|e| EffectsError::Prediction(e.to_string()))?;
    effects::estimands_from_curves(grid, &mu, &gdist)
}

/// Pooled true surface `[mu(0, ·), mu(1, ·)]` on `grid`.
pub fn true_surface(gt: &GroundTruth, mask: Option<&[bool]>, grid: &[f64]) -> [Vec<f64>; 2] {
    [
        grid.iter().map(|&g| gt.mu(mask, false, g)).collect(),
        grid.iter().map(|&g| gt.mu(mask, true, g)).collect(),
    ]
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: BipartiteDataset,
    pub ground_truth: GroundTruth,
    pub source_locations: Vec<[f64; 2]>,
    pub receptor_locations: Vec<[f64; 2]>,
    pub emissions: Vec<f64>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_outcome;
    let j = cfg.n_interventional;
    let n_fields = cfg.n_int_covariates.max(cfg.n_out_covariates);
    let fields: Vec<SpatialField> = (0..n_fields).map(|_| SpatialField::draw(&mut rng, cfg.field_features, cfg.field_length)).collect();

    let point = |rng: &mut ChaCha20Rng| [rng.random_range(0.0..cfg.extent), rng.random_range(0.0..cfg.extent)];
    let sources: Vec<[f64; 2]> = (0..j).map(|_| point(&mut rng)).collect();
    let receptors: Vec<[f64; 2]> = (0..n).map(|_| point(&mut rng)).collect();
    let emission = LogNormal::new(0.0, cfg.emission_log_sd).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let emissions: Vec<f64> = (0..j).map(|_| emission.sample(&mut rng)).collect();

    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let rho = cfg.field_loading;
    let idio = (1.0 - rho * rho).sqrt();
    let covariate = |rng: &mut ChaCha20Rng, field: &SpatialField, p: [f64; 2]| rho * field.at(p) + idio * std.sample(rng);
    let x_int: Vec<Vec<f64>> = sources.iter().map(|&p| fields[..cfg.n_int_covariates].iter().map(|f| covariate(&mut rng, f, p)).collect()).collect();
    let x_out: Vec<Vec<f64>> = receptors.iter().map(|&p| fields[..cfg.n_out_covariates].iter().map(|f| covariate(&mut rng, f, p)).collect()).collect();

    let treated: Vec<bool> = x_int
        .iter()
        .map(|x| {
            let eta = cfg.treatment_intercept + x.iter().zip(&cfg.treatment_coefficients).map(|(a, b)| a * b).sum::<f64>();
            Bernoulli::new(1.0 / (1.0 + (-eta).exp())).expect("probability in [0, 1]").sample(&mut rng)
        })
        .collect();

    let person_years = LogNormal::new(cfg.person_years_median.ln(), cfg.person_years_log_sd).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let offsets: Vec<f64> = (0..n).map(|_| person_years.sample(&mut rng)).collect();

    let map = plume_map(&receptors, &sources, &emissions, cfg.drift, cfg.sigma)?;
    let (key, z, g_raw) = derive_from_map(&map, &treated).map_err(|e| SynthError::Internal(e.to_string()))?;
    let (g, _) = rescale_by_max(&g_raw);

    let mut base = Vec::with_capacity(n);
    let mut z_slope = Vec::with_capacity(n);
    let mut g_slope = Vec::with_capacity(n);
    for i in 0..n {
        let m = if x_int[key[i]][0] > 0.0 { 1.0 } else { 0.0 };
        base.push(cfg.beta0 + x_out[i].iter().zip(&cfg.beta_x).map(|(a, b)| a * b).sum::<f64>());
        z_slope.push(cfg.beta_z + cfg.beta_z_modifier * m);
        g_slope.push(cfg.beta_g + cfg.beta_g_modifier * m);
    }

    let mut outcomes = Vec::with_capacity(n);
    for i in 0..n {
        let eta = base[i] + if z[i] { z_slope[i] } else { 0.0 } + g_slope[i] * g[i];
        let y = match cfg.family {
            OutcomeFamily::PoissonOffset => {
                let lambda = offsets[i] * eta.exp();
                if lambda > 0.0 {
                    Poisson::new(lambda).map_err(|e| SynthError::InvalidConfig(format!("outcome rate {lambda}: {e}")))?.sample(&mut rng)
                } else {
                    0.0
                }
            }
            OutcomeFamily::Normal => eta + cfg.noise_sd * std.sample(&mut rng),
        };
        outcomes.push(y);
    }

    let width_j = j.to_string().len();
    let width_n = n.to_string().len();
    let interventional_units = (0..j)
        .map(|k| InterventionalUnit { id: format!("S{:0width$}", k + 1, width = width_j), treated: treated[k], covariates: x_int[k].clone() })
        .collect();
    let outcome_units = (0..n)
        .map(|i| OutcomeUnit {
            id: format!("R{:0width$}", i + 1, width = width_n),
            outcome: outcomes[i],
            offset_exposure: match cfg.family {
                OutcomeFamily::PoissonOffset => offsets[i],
                OutcomeFamily::Normal => 1.0,
            },
            covariates: x_out[i].clone(),
        })
        .collect();
    let dataset = BipartiteDataset::new(cfg.int_names(), cfg.out_names(), interventional_units, outcome_units, map, cfg.default_schema())
        .map_err(|e| SynthError::Internal(e.to_string()))?;

    let ground_truth = GroundTruth {
        family: cfg.family,
        beta0: cfg.beta0,
        beta_z: cfg.beta_z,
        beta_g: cfg.beta_g,
        beta_x: cfg.beta_x.clone(),
        beta_z_modifier: cfg.beta_z_modifier,
        beta_g_modifier: cfg.beta_g_modifier,
        rate_denominator: RATE_DENOMINATOR,
        base,
        z_slope,
        g_slope,
        z,
        g,
    };
    Ok(SynthOutput { dataset, ground_truth, source_locations: sources, receptor_locations: receptors, emissions })
}
