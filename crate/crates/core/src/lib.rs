//! Causal effects of interventions on bipartite interference networks.
//!
//! Treatments act on interventional units and outcomes are measured on a
//! separate set of outcome units, linked by a weighted interference map.
//! Each outcome unit gets a key-associated treatment `z` (the treatment of
//! its most influential interventional unit) and a continuous upwind
//! treatment `g` (the influence-weighted treatment of all others, rescaled to
//! `[0, 1]`). The dose-response surface `mu(z, g)` is estimated by
//! subclassifying on a propensity score for `z`, fitting an upwind
//! generalized propensity score and an outcome model within each stratum,
//! and averaging counterfactual predictions.
//!
//! ```no_run
//! use bipartite::{frame::AnalysisFrame, pipeline::{run_pipeline, PipelineConfig}, synth};
//!
//! let out = synth::generate(&synth::SynthConfig::default()).unwrap();
//! let ex = bipartite::exposure::derive_exposures(&out.dataset).unwrap();
//! let frame = AnalysisFrame::build(&out.dataset, &ex).unwrap();
//! let fit = run_pipeline(&frame, &PipelineConfig::default()).unwrap();
//! println!("tau = {}", fit.estimates.tau);
//! ```

pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod effects;
pub mod error;
pub mod exposure;
pub mod frame;
pub mod glm;
pub mod linalg;
pub mod pipeline;
pub mod propensity;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorReport, Result};
