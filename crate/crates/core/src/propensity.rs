//! Key-associated propensity score, overlap trimming, subclassification,
//! per-stratum upwind generalized propensity scores and balance diagnostics.

use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

use crate::frame::AnalysisFrame;
use crate::glm::{self, Family, GlmError, GlmFit, GlmSpec};
use crate::linalg::Matrix;
use crate::stats::{mean, quantile_sorted, sample_variance};

/// Residual variances below this are treated as a degenerate upwind model.
pub const MIN_GPS_VARIANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropensityError {
    #[error("key-associated propensity model: {0}")]
    Glm(GlmError),
    #[error("key-associated treatment has no variation (all units have z = {0})")]
    Separation(u8),
    #[error("overlap trimming leaves no units with z = {0}")]
    EmptyAfterTrim(u8),
    #[error("stratum cutpoints collapse: {cutpoints:?}")]
    DegenerateQuantiles { cutpoints: Vec<f64> },
    #[error("stratum {stratum} has {size} units, needs at least {required}")]
    StratumTooSmall { stratum: usize, size: usize, required: usize },
    #[error("stratum {stratum} upwind model: {source}")]
    StratumModel { stratum: usize, source: GlmError },
    #[error("stratum {stratum} upwind model has residual variance {variance:e}")]
    DegenerateVariance { stratum: usize, variance: f64 },
    #[error("invalid setting: {0}")]
    InvalidConfig(String),
}

impl PropensityError {
    pub fn code(&self) -> &'static str {
        match self {
            PropensityError::Glm(_) => "glm",
            PropensityError::Separation(_) => "separation",
            PropensityError::EmptyAfterTrim(_) => "empty_after_trim",
            PropensityError::DegenerateQuantiles { .. } => "degenerate_quantiles",
            PropensityError::StratumTooSmall { .. } => "stratum_too_small",
            PropensityError::StratumModel { .. } => "stratum_model",
            PropensityError::DegenerateVariance { .. } => "stratum_too_small",
            PropensityError::InvalidConfig(_) => "invalid_config",
        }
    }
}

/// Common-support trimming. `alpha = 0` is min/max trimming; `alpha > 0`
/// replaces the group extremes by the `alpha` and `1 - alpha` quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrimRule {
    #[serde(default)]
    pub alpha: f64,
}

impl Default for TrimRule {
    fn default() -> Self {
        Self { alpha: 0.0 }
    }
}

/// Which units define the stratum cutpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileBasis {
    #[default]
    Treated,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPropensity {
    pub fit: GlmFit,
    pub phi_hat: Vec<f64>,
}

/// Logistic regression of the key-associated treatment on its covariates.
pub fn fit_key_ps(frame: &AnalysisFrame) -> Result<KeyPropensity, PropensityError> {
    let y: Vec<f64> = (0..frame.len()).map(|i| frame.z_f64(i)).collect();
    let n1 = frame.z.iter().filter(|&&z| z).count();
    if n1 == 0 {
        return Err(PropensityError::Separation(0));
    }
    if n1 == frame.len() {
        return Err(PropensityError::Separation(1));
    }
    let spec = GlmSpec::new(Family::Logistic, frame.phi_names.clone()).map_err(PropensityError::Glm)?;
    let fit = glm::fit(&spec, &frame.phi_covariates, &y, None).map_err(PropensityError::Glm)?;
    if fit.separation {
        log::warn!("key-associated propensity model shows separation; trimming will drop the extreme region");
    } else if !fit.converged {
        log::warn!("key-associated propensity model did not converge after {} iterations", fit.iterations);
    }
    let phi_hat = (0..frame.len())
        .map(|i| glm::clamped_inverse_logit(fit.eta_unchecked(frame.phi_covariates.row(i))))
        .collect();
    Ok(KeyPropensity { fit, phi_hat })
}

fn group_bounds(phi: &[f64], z: &[bool], kept: &[bool], group: bool, alpha: f64) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = (0..phi.len()).filter(|&i| kept[i] && z[i] == group).map(|i| phi[i]).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    if alpha == 0.0 {
        Some((v[0], v[v.len() - 1]))
    } else {
        Some((quantile_sorted(&v, alpha), quantile_sorted(&v, 1.0 - alpha)))
    }
}

/// Common-support interval `[max(lo1, lo0), min(hi1, hi0)]` from the group bounds.
pub fn overlap_bounds(phi: &[f64], z: &[bool], rule: TrimRule) -> Result<(f64, f64), PropensityError> {
    if !(0.0..=0.05).contains(&rule.alpha) {
        return Err(PropensityError::InvalidConfig(format!("trim alpha {} outside [0, 0.05]", rule.alpha)));
    }
    let all = vec![true; phi.len()];
    let (min1, max1) = group_bounds(phi, z, &all, true, rule.alpha).ok_or(PropensityError::EmptyAfterTrim(1))?;
    let (min0, max0) = group_bounds(phi, z, &all, false, rule.alpha).ok_or(PropensityError::EmptyAfterTrim(0))?;
    Ok((min1.max(min0), max1.min(max0)))
}

/// Keeps units whose score lies inside the common support of both groups.
pub fn trim_overlap(phi: &[f64], z: &[bool], rule: TrimRule) -> Result<Vec<bool>, PropensityError> {
    let (lo, hi) = overlap_bounds(phi, z, rule)?;
    let kept: Vec<bool> = phi.iter().map(|&p| p >= lo && p <= hi).collect();
    for group in [false, true] {
        if !(0..phi.len()).any(|i| kept[i] && z[i] == group) {
            return Err(PropensityError::EmptyAfterTrim(u8::from(group)));
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub k: usize,
    /// `k - 1` strictly increasing cutpoints.
    pub cutpoints: Vec<f64>,
    /// Zero-based stratum per unit; `None` for trimmed units.
    pub labels: Vec<Option<usize>>,
    pub counts: Vec<usize>,
    /// `n_k / n_kept`.
    pub weights: Vec<f64>,
    /// Quantile cutpoints removed because a stratum lacked one treatment level.
    #[serde(default)]
    pub dropped_cutpoints: Vec<f64>,
}

impl Strata {
    /// Kept unit indices in stratum `k`, ascending.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == Some(k)).collect()
    }
}

/// Stratum of `value` given ascending cutpoints: intervals are left-closed,
/// with the last one closed on both ends.
pub fn stratum_of(cutpoints: &[f64], value: f64) -> usize {
    cutpoints.partition_point(|&c| c <= value)
}

/// Cuts kept units into `k` strata at the `1/k, ..., (k-1)/k` quantiles of
/// the propensity score among kept treated units (or all kept units).
pub fn subclassify(phi: &[f64], z: &[bool], kept: &[bool], k: usize, basis: QuantileBasis) -> Result<Strata, PropensityError> {
    if k < 1 {
        return Err(PropensityError::InvalidConfig("number of strata must be at least 1".into()));
    }
    let mut ref_values: Vec<f64> = (0..phi.len())
        .filter(|&i| kept[i] && (basis == QuantileBasis::All || z[i]))
        .map(|i| phi[i])
        .collect();
    ref_values.sort_by(f64::total_cmp);
    let mut distinct = ref_values.clone();
    distinct.dedup();
    if ref_values.is_empty() || distinct.len() < k {
        return Err(PropensityError::DegenerateQuantiles { cutpoints: distinct });
    }
    let cutpoints: Vec<f64> = (1..k).map(|q| quantile_sorted(&ref_values, q as f64 / k as f64)).collect();
    if cutpoints.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(PropensityError::DegenerateQuantiles { cutpoints });
    }
    Ok(strata_from_cutpoints(phi, kept, cutpoints))
}

/// Labels kept units by ascending `cutpoints`.
pub fn strata_from_cutpoints(phi: &[f64], kept: &[bool], cutpoints: Vec<f64>) -> Strata {
    let k = cutpoints.len() + 1;
    let labels: Vec<Option<usize>> = (0..phi.len()).map(|i| kept[i].then(|| stratum_of(&cutpoints, phi[i]))).collect();
    let mut counts = vec![0usize; k];
    for l in labels.iter().flatten() {
        counts[*l] += 1;
    }
    let total: usize = counts.iter().sum();
    let weights = counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect();
    Strata { k, cutpoints, labels, counts, weights, dropped_cutpoints: Vec::new() }
}

/// Merges strata until each holds kept units with both treatment levels,
/// so that the treatment contrast is estimable inside every stratum. A
/// deficient stratum joins its lower neighbour; the first joins the second.
pub fn merge_single_level_strata(strata: Strata, phi: &[f64], z: &[bool]) -> Result<Strata, PropensityError> {
    let kept: Vec<bool> = strata.labels.iter().map(Option::is_some).collect();
    let mut cutpoints = strata.cutpoints.clone();
    let mut dropped = strata.dropped_cutpoints.clone();
    loop {
        let current = strata_from_cutpoints(phi, &kept, cutpoints.clone());
        let mut levels = vec![[0usize; 2]; current.k];
        for (i, l) in current.labels.iter().enumerate() {
            if let Some(l) = l {
                levels[*l][usize::from(z[i])] += 1;
            }
        }
        let Some(bad) = levels.iter().position(|c| c[0] == 0 || c[1] == 0) else {
            return Ok(Strata { dropped_cutpoints: dropped, ..current });
        };
        if current.k == 1 {
            let missing = if levels[0][0] == 0 { 0 } else { 1 };
            return Err(PropensityError::EmptyAfterTrim(missing));
        }
        let cut = cutpoints.remove(bad.saturating_sub(1));
        log::warn!("stratum {} lacks a treatment level; merged by dropping cutpoint {cut}", bad + 1);
        dropped.push(cut);
    }
}

/// Upwind-propensity predictor vector for one unit: `[z, covariates...]`.
pub fn gps_predictors(z: f64, covariates: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(covariates.len() + 1);
    x.push(z);
    x.extend_from_slice(covariates);
    x
}

/// Normal-regression upwind propensity model within each stratum and the
/// density at each kept unit's observed exposure (`NaN` for trimmed units).
pub fn fit_stratum_gps(frame: &AnalysisFrame, strata: &Strata) -> Result<(Vec<GlmFit>, Vec<f64>), PropensityError> {
    let mut names = vec!["z".to_string()];
    names.extend(frame.gps_names.iter().cloned());
    let spec = GlmSpec::new(Family::Normal, names).map_err(PropensityError::Glm)?;
    let p = spec.predictors.len();
    let mut fits = Vec::with_capacity(strata.k);
    let mut lambda_hat = vec![f64::NAN; frame.len()];
    for k in 0..strata.k {
        let members = strata.members(k);
        if members.len() < p + 2 {
            return Err(PropensityError::StratumTooSmall { stratum: k + 1, size: members.len(), required: p + 2 });
        }
        let design = stratum_gps_design(frame, &members);
        let g: Vec<f64> = members.iter().map(|&i| frame.g[i]).collect();
        let fit = glm::fit(&spec, &design, &g, None).map_err(|source| PropensityError::StratumModel { stratum: k + 1, source })?;
        let variance = fit.residual_variance.unwrap_or(0.0);
        if !(variance >= MIN_GPS_VARIANCE) {
            return Err(PropensityError::DegenerateVariance { stratum: k + 1, variance });
        }
        for &i in &members {
            let x = gps_predictors(frame.z_f64(i), frame.gps_covariates.row(i));
            lambda_hat[i] = fit.gps_density(&x, frame.g[i]).map_err(|source| PropensityError::StratumModel { stratum: k + 1, source })?;
        }
        fits.push(fit);
    }
    Ok((fits, lambda_hat))
}

fn stratum_gps_design(frame: &AnalysisFrame, members: &[usize]) -> Matrix {
    let p = frame.gps_covariates.cols() + 1;
    let mut m = Matrix::zeros(members.len(), p);
    for (r, &i) in members.iter().enumerate() {
        m.set(r, 0, frame.z_f64(i));
        for (c, v) in frame.gps_covariates.row(i).iter().enumerate() {
            m.set(r, c + 1, *v);
        }
    }
    m
}

/// Settings for the propensity stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensitySettings {
    pub strata: usize,
    pub trim: TrimRule,
    pub quantile_basis: QuantileBasis,
}

impl Default for PropensitySettings {
    fn default() -> Self {
        Self { strata: 5, trim: TrimRule::default(), quantile_basis: QuantileBasis::Treated }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedPropensityFit {
    pub phi_fit: GlmFit,
    pub phi_hat: Vec<f64>,
    pub kept: Vec<bool>,
    pub strata: Strata,
    pub lambda_fits: Vec<GlmFit>,
    /// Upwind propensity at each kept unit's observed exposure.
    pub lambda_hat: Vec<f64>,
}

impl StratifiedPropensityFit {
    pub fn n_kept(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    /// `phi(z; x_i)`: probability of key-associated treatment level `z`.
    pub fn phi(&self, frame: &AnalysisFrame, i: usize, z: bool) -> f64 {
        let p1 = glm::clamped_inverse_logit(self.phi_fit.eta_unchecked(frame.phi_covariates.row(i)));
        if z {
            p1
        } else {
            1.0 - p1
        }
    }

    /// `lambda(g; z, x_i)` from unit `i`'s stratum model; `None` for trimmed units.
    pub fn lambda(&self, frame: &AnalysisFrame, i: usize, z: bool, g: f64) -> Option<f64> {
        let k = self.strata.labels[i]?;
        let x = gps_predictors(if z { 1.0 } else { 0.0 }, frame.gps_covariates.row(i));
        self.lambda_fits[k].gps_density(&x, g).ok()
    }

    /// Joint propensity `psi(z, g; x_i) = lambda(g; z, x_i) * phi(z; x_i)`.
    pub fn joint_score(&self, frame: &AnalysisFrame, i: usize, z: bool, g: f64) -> Option<f64> {
        Some(self.lambda(frame, i, z, g)? * self.phi(frame, i, z))
    }
}

/// Full propensity stage: fit, trim, subclassify, per-stratum upwind models.
pub fn fit_propensity(frame: &AnalysisFrame, settings: &PropensitySettings) -> Result<StratifiedPropensityFit, PropensityError> {
    let kp = fit_key_ps(frame)?;
    let kept = trim_overlap(&kp.phi_hat, &frame.z, settings.trim)?;
    let strata = subclassify(&kp.phi_hat, &frame.z, &kept, settings.strata, settings.quantile_basis)?;
    let strata = merge_single_level_strata(strata, &kp.phi_hat, &frame.z)?;
    let (lambda_fits, lambda_hat) = fit_stratum_gps(frame, &strata)?;
    Ok(StratifiedPropensityFit { phi_fit: kp.fit, phi_hat: kp.phi_hat, kept, strata, lambda_fits, lambda_hat })
}

/// Standardized mean difference `(m1 - m0) / sqrt((s1^2 + s0^2) / 2)`.
///
/// `NaN` when a group has fewer than two units; signed infinity when both
/// variances vanish but the means differ; zero when everything coincides.
pub fn smd(treated: &[f64], control: &[f64]) -> f64 {
    if treated.len() < 2 || control.len() < 2 {
        return f64::NAN;
    }
    let diff = mean(treated) - mean(control);
    let pooled = ((sample_variance(treated) + sample_variance(control)) / 2.0).sqrt();
    if pooled > 0.0 {
        diff / pooled
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub unadjusted: f64,
    pub per_stratum: Vec<f64>,
    pub stratum_average: f64,
    /// Some SMD in the row hit a zero pooled variance.
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceTable {
    pub k: usize,
    pub rows: Vec<BalanceRow>,
}

impl BalanceTable {
    /// Mean absolute unadjusted and stratum-averaged SMD over the given covariates.
    pub fn mean_abs(&self, covariates: &[String]) -> (f64, f64) {
        let rows: Vec<&BalanceRow> = self.rows.iter().filter(|r| covariates.contains(&r.covariate)).collect();
        let n = rows.len() as f64;
        (
            rows.iter().map(|r| r.unadjusted.abs()).sum::<f64>() / n,
            rows.iter().map(|r| r.stratum_average.abs()).sum::<f64>() / n,
        )
    }

    /// Writes `covariate,smd_unadjusted,smd_stratum_1..K,smd_stratum_avg`; `NA` for undefined values.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let fmt = |v: f64| {
            if v.is_nan() {
                "NA".to_string()
            } else if v.is_infinite() {
                if v > 0.0 { "Inf" } else { "-Inf" }.to_string()
            } else {
                v.to_string()
            }
        };
        let mut out = String::from("covariate,smd_unadjusted");
        for k in 1..=self.k {
            out.push_str(&format!(",smd_stratum_{k}"));
        }
        out.push_str(",smd_stratum_avg\n");
        for r in &self.rows {
            out.push_str(&r.covariate);
            out.push(',');
            out.push_str(&fmt(r.unadjusted));
            for v in &r.per_stratum {
                out.push(',');
                out.push_str(&fmt(*v));
            }
            out.push(',');
            out.push_str(&fmt(r.stratum_average));
            out.push('\n');
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())
    }
}

/// SMD of every balance covariate over kept units, within each stratum, and
/// the stratum-weighted average.
pub fn balance_table(frame: &AnalysisFrame, fit: &StratifiedPropensityFit) -> BalanceTable {
    let strata = &fit.strata;
    let split = |c: usize, filter: &dyn Fn(usize) -> bool| {
        let (mut t, mut u) = (Vec::new(), Vec::new());
        for i in 0..frame.len() {
            if filter(i) {
                let v = frame.balance_covariates.get(i, c);
                if frame.z[i] {
                    t.push(v);
                } else {
                    u.push(v);
                }
            }
        }
        smd(&t, &u)
    };
    let rows = frame
        .balance_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let unadjusted = split(c, &|i| fit.kept[i]);
            let per_stratum: Vec<f64> = (0..strata.k).map(|k| split(c, &|i| strata.labels[i] == Some(k))).collect();
            let stratum_average = per_stratum.iter().zip(&strata.weights).map(|(s, w)| w * s).sum();
            let zero_variance = std::iter::once(&unadjusted).chain(&per_stratum).any(|v| v.is_infinite());
            if zero_variance {
                log::warn!("covariate `{name}` has zero pooled variance in some comparison");
            }
            BalanceRow { covariate: name.clone(), unadjusted, per_stratum, stratum_average, zero_variance }
        })
        .collect();
    BalanceTable { k: strata.k, rows }
}
