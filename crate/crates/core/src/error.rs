//! Crate-level error with module-qualified codes and exit classes.

use serde::Serialize;
use thiserror::Error;

use crate::bootstrap::BootstrapError;
use crate::data::DataError;
use crate::effects::EffectsError;
use crate::exposure::ExposureError;
use crate::glm::GlmError;
use crate::pipeline::PipelineError;
use crate::propensity::PropensityError;
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Exposure(#[from] ExposureError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Effects(#[from] EffectsError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<PipelineError> for Error {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Propensity(e) => Error::Propensity(e),
            PipelineError::Effects(e) => Error::Effects(e),
            PipelineError::Exposure(e) => Error::Exposure(e),
        }
    }
}

/// Process exit status for a failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExitClass {
    Validation = 1,
    Estimation = 2,
}

impl Error {
    /// `module.reason`, e.g. `data.negative_weight`.
    pub fn code(&self) -> String {
        let (module, reason) = match self {
            Error::Data(e) => ("data", e.code()),
            Error::Exposure(e) => ("exposure", exposure_code(e)),
            Error::Glm(e) => ("glm", e.code()),
            Error::Propensity(PropensityError::Glm(e)) => return format!("propensity.glm.{}", e.code()),
            Error::Propensity(e) => ("propensity", e.code()),
            Error::Effects(e) => ("effects", e.code()),
            Error::Bootstrap(BootstrapError::Original(e)) => return format!("bootstrap.{}", Error::from(e.clone()).code()),
            Error::Bootstrap(e) => ("bootstrap", e.code()),
            Error::Synth(e) => ("synth", e.code()),
            Error::Config(_) => ("cli", "invalid_config"),
            Error::Io { .. } => ("cli", "io"),
        };
        format!("{module}.{reason}")
    }

    pub fn exit_class(&self) -> ExitClass {
        let validation = match self {
            Error::Data(_) | Error::Config(_) | Error::Io { .. } => true,
            Error::Exposure(e) => !matches!(e, ExposureError::EmptySample),
            Error::Propensity(e) => matches!(e, PropensityError::InvalidConfig(_)),
            Error::Effects(e) => matches!(e, EffectsError::InvalidGrid(_)),
            Error::Bootstrap(e) => matches!(e, BootstrapError::InvalidConfig(_)),
            Error::Synth(e) => matches!(e, SynthError::InvalidConfig(_)),
            Error::Glm(_) => false,
        };
        if validation {
            ExitClass::Validation
        } else {
            ExitClass::Estimation
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.exit_class() as i32
    }
}

fn exposure_code(e: &ExposureError) -> &'static str {
    match e {
        ExposureError::EmptyRow => "empty_row",
        ExposureError::OrphanOutcomeUnit { .. } => "orphan_outcome_unit",
        ExposureError::DimensionMismatch { .. } => "dimension_mismatch",
        ExposureError::EmptySample => "empty_sample",
    }
}

/// Machine-readable failure record.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub code: String,
    pub message: String,
    pub exit_code: i32,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        Self { code: e.code(), message: e.to_string(), exit_code: e.exit_code() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
