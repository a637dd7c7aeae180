//! Within-stratum outcome models, the dose-response surface and the causal
//! estimands built from it.
//!
//! For every kept unit and every grid point `(z, g)` the upwind propensity is
//! re-evaluated at the counterfactual exposure before it enters the outcome
//! model, so predicted potential outcomes never reuse the observed density.

use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

use crate::data::OutcomeFamily;
use crate::exposure::GDistribution;
use crate::frame::AnalysisFrame;
use crate::glm::{self, Family, GlmError, GlmFit, GlmSpec};
use crate::linalg::Matrix;
use crate::propensity::{gps_predictors, StratifiedPropensityFit};

/// Person-time denominator for rate-scale surfaces.
pub const RATE_DENOMINATOR: f64 = 10_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffectsError {
    #[error("stratum {stratum} has {size} units, needs at least {required}")]
    StratumTooSmall { stratum: usize, size: usize, required: usize },
    #[error("stratum {stratum} outcome model: {source}")]
    OutcomeModel { stratum: usize, source: GlmError },
    #[error("stratum {stratum} outcome model did not converge")]
    NotConverged { stratum: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("upwind treatment {0} lies outside the grid")]
    OutOfGrid(f64),
    #[error("{0}")]
    Prediction(String),
}

impl EffectsError {
    pub fn code(&self) -> &'static str {
        match self {
            EffectsError::StratumTooSmall { .. } => "stratum_too_small",
            EffectsError::OutcomeModel { .. } => "outcome_model",
            EffectsError::NotConverged { .. } => "not_converged",
            EffectsError::InvalidGrid(_) => "invalid_grid",
            EffectsError::OutOfGrid(_) => "out_of_grid",
            EffectsError::Prediction(_) => "prediction",
        }
    }
}

/// Evenly spaced grid `start, start + step, ..., stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { start: 0.0, stop: 1.0, step: 0.02 }
    }
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>, EffectsError> {
        if self.start != 0.0 {
            return Err(EffectsError::InvalidGrid("grid must start at 0 so upwind contrasts are defined".into()));
        }
        if !(self.step > 0.0) || !(self.stop > self.start) || !self.stop.is_finite() {
            return Err(EffectsError::InvalidGrid(format!("start {} stop {} step {}", self.start, self.stop, self.step)));
        }
        let intervals = ((self.stop - self.start) / self.step).round();
        if (intervals * self.step - (self.stop - self.start)).abs() > 1e-9 * self.stop.abs().max(1.0) {
            return Err(EffectsError::InvalidGrid("step does not divide the range".into()));
        }
        let m = intervals as usize;
        let mut pts: Vec<f64> = (0..=m).map(|k| self.start + k as f64 * self.step).collect();
        pts[m] = self.stop;
        Ok(pts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceScale {
    #[serde(rename = "rate_per_10k")]
    RatePer10k,
    OutcomeNative,
}

impl SurfaceScale {
    pub fn for_family(family: OutcomeFamily) -> Self {
        match family {
            OutcomeFamily::PoissonOffset => SurfaceScale::RatePer10k,
            OutcomeFamily::Normal => SurfaceScale::OutcomeNative,
        }
    }
}

/// Outcome-model predictor vector `[z, g, lambda, covariates...]`.
pub fn outcome_predictors(z: f64, g: f64, lambda: f64, covariates: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(covariates.len() + 3);
    x.extend_from_slice(&[z, g, lambda]);
    x.extend_from_slice(covariates);
    x
}

fn outcome_spec(frame: &AnalysisFrame) -> Result<GlmSpec, GlmError> {
    let family = match frame.family {
        OutcomeFamily::PoissonOffset => Family::PoissonOffset,
        OutcomeFamily::Normal => Family::Normal,
    };
    let mut names = vec!["z".to_string(), "g".to_string(), "lambda".to_string()];
    names.extend(frame.outcome_names.iter().cloned());
    GlmSpec::new(family, names)
}

/// Outcome regression within each stratum on `[z, g, lambda_hat, covariates]`,
/// with a log person-time offset for the Poisson family.
pub fn fit_outcome_models(frame: &AnalysisFrame, ps: &StratifiedPropensityFit) -> Result<Vec<GlmFit>, EffectsError> {
    let spec = outcome_spec(frame).map_err(|source| EffectsError::OutcomeModel { stratum: 0, source })?;
    let p = spec.predictors.len();
    let mut fits = Vec::with_capacity(ps.strata.k);
    for k in 0..ps.strata.k {
        let members = ps.strata.members(k);
        if members.len() < p + 2 {
            return Err(EffectsError::StratumTooSmall { stratum: k + 1, size: members.len(), required: p + 2 });
        }
        let mut design = Matrix::zeros(members.len(), p);
        for (r, &i) in members.iter().enumerate() {
            let x = outcome_predictors(frame.z_f64(i), frame.g[i], ps.lambda_hat[i], frame.outcome_covariates.row(i));
            for (c, v) in x.iter().enumerate() {
                design.set(r, c, *v);
            }
        }
        let y: Vec<f64> = members.iter().map(|&i| frame.outcome[i]).collect();
        let offset: Option<Vec<f64>> = (spec.family == Family::PoissonOffset)
            .then(|| members.iter().map(|&i| frame.offset_exposure[i].ln()).collect());
        let fit = glm::fit(&spec, &design, &y, offset.as_deref()).map_err(|source| EffectsError::OutcomeModel { stratum: k + 1, source })?;
        if !fit.converged {
            return Err(EffectsError::NotConverged { stratum: k + 1 });
        }
        fits.push(fit);
    }
    Ok(fits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseResponseSurface {
    pub g_grid: Vec<f64>,
    pub scale: SurfaceScale,
    /// `mu_strata[k][z][t]` for stratum `k`, treatment `z` and grid index `t`.
    pub mu_strata: Vec<[Vec<f64>; 2]>,
    /// `pooled[z][t] = sum_k pi_k mu_strata[k][z][t]`.
    pub pooled: [Vec<f64>; 2],
    pub stratum_weights: Vec<f64>,
    /// Share of grid points outside each stratum's observed upwind range.
    pub extrapolation_fraction: Vec<f64>,
}

impl DoseResponseSurface {
    /// Writes `z,g,stratum,mu` rows for every stratum (1-based).
    pub fn write_strata_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::from("z,g,stratum,mu\n");
        for (k, per_z) in self.mu_strata.iter().enumerate() {
            for (z, row) in per_z.iter().enumerate() {
                for (g, mu) in self.g_grid.iter().zip(row) {
                    out.push_str(&format!("{z},{g},{},{mu}\n", k + 1));
                }
            }
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())
    }

    /// Writes `z,g,mu` rows of the pooled surface.
    pub fn write_pooled_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::from("z,g,mu\n");
        for (z, row) in self.pooled.iter().enumerate() {
            for (g, mu) in self.g_grid.iter().zip(row) {
                out.push_str(&format!("{z},{g},{mu}\n"));
            }
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())
    }
}

/// Counterfactual density and predicted outcome for kept unit `i` at `(z, g)`.
///
/// This is the reference path through the public GLM prediction functions;
/// [`predict_surface`] evaluates the same quantities with precomputed parts.
pub fn counterfactual_outcome(
    frame: &AnalysisFrame,
    ps: &StratifiedPropensityFit,
    theta: &[GlmFit],
    i: usize,
    z: bool,
    g: f64,
) -> Result<(f64, f64), EffectsError> {
    let k = ps.strata.labels[i].ok_or_else(|| EffectsError::Prediction(format!("unit {i} was trimmed")))?;
    let zf = if z { 1.0 } else { 0.0 };
    let lambda = ps.lambda_fits[k]
        .gps_density(&gps_predictors(zf, frame.gps_covariates.row(i)), g)
        .map_err(|e| EffectsError::Prediction(e.to_string()))?;
    let offset = match frame.family {
        OutcomeFamily::PoissonOffset => Some(RATE_DENOMINATOR.ln()),
        OutcomeFamily::Normal => None,
    };
    let y = theta[k]
        .predict_mean(&outcome_predictors(zf, g, lambda, frame.outcome_covariates.row(i)), offset)
        .map_err(|e| EffectsError::Prediction(e.to_string()))?;
    Ok((lambda, y))
}

/// Averages counterfactual predictions over each stratum's kept units and
/// pools the stratum curves with weights `pi_k`.
pub fn predict_surface(
    theta: &[GlmFit],
    ps: &StratifiedPropensityFit,
    frame: &AnalysisFrame,
    g_grid: &[f64],
) -> Result<DoseResponseSurface, EffectsError> {
    let k_strata = ps.strata.k;
    if theta.len() != k_strata || ps.lambda_fits.len() != k_strata {
        return Err(EffectsError::Prediction(format!("{} outcome fits for {k_strata} strata", theta.len())));
    }
    let scale = SurfaceScale::for_family(frame.family);
    let log_denominator = RATE_DENOMINATOR.ln();
    let n_grid = g_grid.len();
    let mut mu_strata = Vec::with_capacity(k_strata);
    let mut extrapolation_fraction = Vec::with_capacity(k_strata);

    for k in 0..k_strata {
        let members = ps.strata.members(k);
        let lam = &ps.lambda_fits[k];
        let th = &theta[k];
        let variance = lam.residual_variance.filter(|v| *v > 0.0).ok_or_else(|| EffectsError::Prediction("upwind model lacks a variance".into()))?;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * variance).sqrt();
        let (dz, theta_z, theta_g, theta_l) = (lam.coefficients[1], th.coefficients[1], th.coefficients[2], th.coefficients[3]);
        let mut sums = [vec![0.0; n_grid], vec![0.0; n_grid]];
        let (mut gmin, mut gmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &members {
            gmin = gmin.min(frame.g[i]);
            gmax = gmax.max(frame.g[i]);
            // z-free parts of both linear predictors
            let gps_base = lam.coefficients[0] + glm_dot(&lam.coefficients[2..], frame.gps_covariates.row(i));
            let out_base = th.coefficients[0] + glm_dot(&th.coefficients[4..], frame.outcome_covariates.row(i));
            for (z, sum) in sums.iter_mut().enumerate() {
                let zf = z as f64;
                let gps_mean = gps_base + dz * zf;
                let eta_z = out_base + theta_z * zf;
                for (t, &g) in g_grid.iter().enumerate() {
                    let d = g - gps_mean;
                    let lambda = norm * (-(d * d) / (2.0 * variance)).exp();
                    let eta = eta_z + theta_g * g + theta_l * lambda;
                    sum[t] += match frame.family {
                        OutcomeFamily::PoissonOffset => (eta + log_denominator).exp(),
                        OutcomeFamily::Normal => eta,
                    };
                }
            }
        }
        let nk = members.len() as f64;
        for s in sums.iter_mut() {
            for v in s.iter_mut() {
                *v /= nk;
            }
        }
        let outside = g_grid.iter().filter(|&&g| g < gmin || g > gmax).count();
        extrapolation_fraction.push(outside as f64 / n_grid as f64);
        mu_strata.push(sums);
    }

    let pooled = pool(&mu_strata, &ps.strata.weights, n_grid);
    Ok(DoseResponseSurface {
        g_grid: g_grid.to_vec(),
        scale,
        mu_strata,
        pooled,
        stratum_weights: ps.strata.weights.clone(),
        extrapolation_fraction,
    })
}

#[inline]
fn glm_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_k w_k mu_k(z, g)` accumulated in ascending stratum order.
pub fn pool(mu_strata: &[[Vec<f64>; 2]], weights: &[f64], n_grid: usize) -> [Vec<f64>; 2] {
    let mut pooled = [vec![0.0; n_grid], vec![0.0; n_grid]];
    for (z, out) in pooled.iter_mut().enumerate() {
        for t in 0..n_grid {
            let mut acc = 0.0;
            for (mu, w) in mu_strata.iter().zip(weights) {
                acc += w * mu[z][t];
            }
            out[t] = acc;
        }
    }
    pooled
}

/// Linear interpolation of `values` on the ascending `grid`; exact at grid points.
pub fn interpolate(grid: &[f64], values: &[f64], g: f64) -> Result<f64, EffectsError> {
    let last = grid.len() - 1;
    if !(g >= grid[0] && g <= grid[last]) {
        return Err(EffectsError::OutOfGrid(g));
    }
    let hi = grid.partition_point(|&x| x < g);
    if grid[hi] == g {
        return Ok(values[hi]);
    }
    let lo = hi - 1;
    let w = (g - grid[lo]) / (grid[hi] - grid[lo]);
    Ok(values[lo] + w * (values[hi] - values[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimates {
    pub g_grid: Vec<f64>,
    /// `mu(1, g) - mu(0, g)`.
    pub tau_of_g: Vec<f64>,
    pub tau: f64,
    /// `delta[z][t] = mu(z, g_t) - mu(z, 0)`.
    pub delta: [Vec<f64>; 2],
    pub delta0: f64,
    pub delta1: f64,
}

/// Direct and upwind effects from a pooled surface, averaged over the
/// distribution of the upwind treatment with linear interpolation.
pub fn estimands(surface: &DoseResponseSurface, gdist: &GDistribution) -> Result<EffectEstimates, EffectsError> {
    estimands_from_curves(&surface.g_grid, &surface.pooled, gdist)
}

/// [`estimands`] for an arbitrary pair of curves on `grid` (grid must start at 0).
pub fn estimands_from_curves(grid: &[f64], mu: &[Vec<f64>; 2], gdist: &GDistribution) -> Result<EffectEstimates, EffectsError> {
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(EffectsError::InvalidGrid("grid must start at 0".into()));
    }
    if mu[0].len() != grid.len() || mu[1].len() != grid.len() {
        return Err(EffectsError::InvalidGrid("curve length differs from grid".into()));
    }
    let tau_of_g: Vec<f64> = mu[1].iter().zip(&mu[0]).map(|(a, b)| a - b).collect();
    let delta = [
        mu[0].iter().map(|v| v - mu[0][0]).collect::<Vec<_>>(),
        mu[1].iter().map(|v| v - mu[1][0]).collect::<Vec<_>>(),
    ];
    let mut tau = 0.0;
    let mut d = [0.0, 0.0];
    for &(g, p) in &gdist.atoms {
        let m0 = interpolate(grid, &mu[0], g)?;
        let m1 = interpolate(grid, &mu[1], g)?;
        tau += p * (m1 - m0);
        d[0] += p * (m0 - mu[0][0]);
        d[1] += p * (m1 - mu[1][0]);
    }
    Ok(EffectEstimates { g_grid: grid.to_vec(), tau_of_g, tau, delta, delta0: d[0], delta1: d[1] })
}
