//! Per-outcome-unit analysis rows.
//!
//! Everything the estimation pipeline needs is fixed here once: the
//! key-associated treatment, the upwind treatment, the outcome and the
//! covariates for each model role, with interventional covariates taken from
//! the key-associated unit. Resampling copies rows and never re-derives them.

use serde::{Deserialize, Serialize};

use crate::data::{BipartiteDataset, DataError, OutcomeFamily};
use crate::exposure::ExposureTable;
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisFrame {
    pub unit_ids: Vec<String>,
    pub z: Vec<bool>,
    pub g: Vec<f64>,
    pub outcome: Vec<f64>,
    pub offset_exposure: Vec<f64>,
    pub family: OutcomeFamily,
    /// Key-associated propensity covariates.
    pub phi_names: Vec<String>,
    pub phi_covariates: Matrix,
    /// Upwind propensity covariates (the key-associated treatment is added at fit time).
    pub gps_names: Vec<String>,
    pub gps_covariates: Matrix,
    /// Outcome-model adjustment covariates.
    pub outcome_names: Vec<String>,
    pub outcome_covariates: Matrix,
    /// Every covariate named in any role, for balance diagnostics.
    pub balance_names: Vec<String>,
    pub balance_covariates: Matrix,
}

/// Label used for an interventional covariate of the key-associated unit.
pub fn int_label(name: &str) -> String {
    format!("int:{name}")
}

/// Label used for an outcome-unit covariate.
pub fn out_label(name: &str) -> String {
    format!("out:{name}")
}

enum Source {
    Int(usize),
    Out(usize),
}

impl AnalysisFrame {
    pub fn build(ds: &BipartiteDataset, ex: &ExposureTable) -> Result<Self, DataError> {
        if ex.len() != ds.n_outcome() {
            return Err(DataError::DimensionMismatch(format!("{} exposures for {} outcome units", ex.len(), ds.n_outcome())));
        }
        let n = ds.n_outcome();
        let s = &ds.schema;
        let resolve = |ints: &[String], outs: &[String]| -> Result<(Vec<String>, Vec<Source>), DataError> {
            let mut names = Vec::new();
            let mut src = Vec::new();
            for name in ints {
                let c = ds
                    .interventional_column(name)
                    .ok_or_else(|| DataError::UnknownCovariate { role: "interventional", name: name.clone() })?;
                names.push(int_label(name));
                src.push(Source::Int(c));
            }
            for name in outs {
                let c = ds.outcome_column(name).ok_or_else(|| DataError::UnknownCovariate { role: "outcome", name: name.clone() })?;
                names.push(out_label(name));
                src.push(Source::Out(c));
            }
            Ok((names, src))
        };
        let gather = |src: &[Source]| -> Matrix {
            let mut m = Matrix::zeros(n, src.len());
            for i in 0..n {
                for (c, s) in src.iter().enumerate() {
                    let v = match *s {
                        Source::Int(k) => ds.interventional_units[ex.key_associated[i]].covariates[k],
                        Source::Out(k) => ds.outcome_units[i].covariates[k],
                    };
                    m.set(i, c, v);
                }
            }
            m
        };
        let (phi_names, phi_src) = resolve(&s.x_int_z, &s.x_out_z)?;
        let (gps_names, gps_src) = resolve(&s.x_int_g, &s.x_out_g)?;
        let (outcome_names, outcome_src) = resolve(&[], &s.x_out_outcome)?;

        let mut bal_int: Vec<String> = Vec::new();
        for name in s.x_int_z.iter().chain(&s.x_int_g) {
            if !bal_int.contains(name) {
                bal_int.push(name.clone());
            }
        }
        let mut bal_out: Vec<String> = Vec::new();
        for name in s.x_out_z.iter().chain(&s.x_out_g).chain(&s.x_out_outcome) {
            if !bal_out.contains(name) {
                bal_out.push(name.clone());
            }
        }
        let (balance_names, balance_src) = resolve(&bal_int, &bal_out)?;

        Ok(Self {
            unit_ids: ex.outcome_ids.clone(),
            z: ex.z.clone(),
            g: ex.g.clone(),
            outcome: ds.outcome_units.iter().map(|u| u.outcome).collect(),
            offset_exposure: ds.outcome_units.iter().map(|u| u.offset_exposure).collect(),
            family: s.family,
            phi_covariates: gather(&phi_src),
            phi_names,
            gps_covariates: gather(&gps_src),
            gps_names,
            outcome_covariates: gather(&outcome_src),
            outcome_names,
            balance_covariates: gather(&balance_src),
            balance_names,
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Frame made of the listed rows (repeats allowed), each copied unchanged.
    pub fn resample(&self, idx: &[usize]) -> Self {
        let pick_f = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            unit_ids: idx.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            z: idx.iter().map(|&i| self.z[i]).collect(),
            g: pick_f(&self.g),
            outcome: pick_f(&self.outcome),
            offset_exposure: pick_f(&self.offset_exposure),
            family: self.family,
            phi_names: self.phi_names.clone(),
            phi_covariates: self.phi_covariates.select_rows(idx),
            gps_names: self.gps_names.clone(),
            gps_covariates: self.gps_covariates.select_rows(idx),
            outcome_names: self.outcome_names.clone(),
            outcome_covariates: self.outcome_covariates.select_rows(idx),
            balance_names: self.balance_names.clone(),
            balance_covariates: self.balance_covariates.select_rows(idx),
        }
    }

    pub fn z_f64(&self, i: usize) -> f64 {
        if self.z[i] {
            1.0
        } else {
            0.0
        }
    }
}
