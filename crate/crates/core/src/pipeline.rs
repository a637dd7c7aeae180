//! One pass of the estimator over an analysis frame.

use serde::{Deserialize, Serialize};

use crate::effects::{self, DoseResponseSurface, EffectEstimates, EffectsError, GridSpec};
use crate::exposure::{empirical_g_distribution, ExposureError};
use crate::frame::AnalysisFrame;
use crate::glm::GlmFit;
use crate::propensity::{fit_propensity, PropensityError, PropensitySettings, StratifiedPropensityFit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub propensity: PropensitySettings,
    pub grid: GridSpec,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Effects(#[from] EffectsError),
    #[error(transparent)]
    Exposure(#[from] ExposureError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub propensity: StratifiedPropensityFit,
    pub outcome_fits: Vec<GlmFit>,
    pub surface: DoseResponseSurface,
    pub estimates: EffectEstimates,
}

/// Propensity stage, outcome models, surface and estimands. The upwind
/// distribution used for averaging is that of the kept units.
pub fn run_pipeline(frame: &AnalysisFrame, cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let grid = cfg.grid.points()?;
    let propensity = fit_propensity(frame, &cfg.propensity)?;
    let outcome_fits = effects::fit_outcome_models(frame, &propensity)?;
    let surface = effects::predict_surface(&outcome_fits, &propensity, frame, &grid)?;
    let kept_g: Vec<f64> = (0..frame.len()).filter(|&i| propensity.kept[i]).map(|i| frame.g[i]).collect();
    let gdist = empirical_g_distribution(&kept_g)?;
    let estimates = effects::estimands(&surface, &gdist)?;
    Ok(PipelineOutput { propensity, outcome_fits, surface, estimates })
}
