//! Key-associated and upwind treatments derived from the interference map.

use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

use crate::data::{BipartiteDataset, InterferenceMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExposureError {
    #[error("interference row is empty")]
    EmptyRow,
    #[error("outcome unit `{id}` has no interference entries")]
    OrphanOutcomeUnit { id: String },
    #[error("treatment vector has length {found}, map has {expected} interventional units")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empirical distribution of an empty sample")]
    EmptySample,
}

/// Per outcome unit: key-associated unit, key-associated treatment `z`,
/// raw upwind treatment `g_raw` and its max-rescaled version `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureTable {
    pub outcome_ids: Vec<String>,
    pub key_associated: Vec<usize>,
    pub key_associated_ids: Vec<String>,
    pub z: Vec<bool>,
    pub g_raw: Vec<f64>,
    pub g: Vec<f64>,
    /// Rescaling denominator `max_i g_raw` (zero when no upwind treatment exists).
    pub g_max: f64,
}

impl ExposureTable {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Writes `outcome_id,key_associated_id,z,g_raw,g`.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::from("outcome_id,key_associated_id,z,g_raw,g\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.outcome_ids[i],
                self.key_associated_ids[i],
                u8::from(self.z[i]),
                self.g_raw[i],
                self.g[i]
            ));
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())
    }
}

/// Index of the largest weight in a sparse row whose indices ascend.
/// Ties go to the smallest interventional index.
pub fn key_associated_unit(indices: &[usize], weights: &[f64]) -> Result<usize, ExposureError> {
    let mut best: Option<(usize, f64)> = None;
    for (&j, &w) in indices.iter().zip(weights) {
        let better = match best {
            None => true,
            Some((bj, bw)) => w > bw || (w == bw && j < bj),
        };
        if better {
            best = Some((j, w));
        }
    }
    best.map(|(j, _)| j).ok_or(ExposureError::EmptyRow)
}

/// Raw exposures computed straight from a map and treatment vector.
pub fn derive_from_map(map: &InterferenceMap, treated: &[bool]) -> Result<(Vec<usize>, Vec<bool>, Vec<f64>), ExposureError> {
    if treated.len() != map.n_interventional() {
        return Err(ExposureError::DimensionMismatch { expected: map.n_interventional(), found: treated.len() });
    }
    let n = map.n_outcome();
    let mut key = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut g_raw = Vec::with_capacity(n);
    for i in 0..n {
        let (cols, weights) = map.row(i);
        let jstar = key_associated_unit(cols, weights)?;
        // ascending j so the sum is reproducible against a dense scan
        let mut acc = 0.0;
        for (&j, &w) in cols.iter().zip(weights) {
            if j != jstar {
                acc += w * if treated[j] { 1.0 } else { 0.0 };
            }
        }
        key.push(jstar);
        z.push(treated[jstar]);
        g_raw.push(acc);
    }
    Ok((key, z, g_raw))
}

/// Rescales by the sample maximum; an all-zero input stays all zero.
pub fn rescale_by_max(g_raw: &[f64]) -> (Vec<f64>, f64) {
    let max = g_raw.iter().copied().fold(0.0_f64, f64::max);
    if max > 0.0 {
        (g_raw.iter().map(|v| v / max).collect(), max)
    } else {
        (vec![0.0; g_raw.len()], 0.0)
    }
}

pub fn derive_exposures(ds: &BipartiteDataset) -> Result<ExposureTable, ExposureError> {
    let treated = ds.treatments();
    let (key, z, g_raw) = derive_from_map(&ds.interference, &treated).map_err(|e| match e {
        ExposureError::EmptyRow => {
            // locate the offending unit for the message
            let i = (0..ds.n_outcome()).find(|&i| ds.interference.row(i).0.is_empty()).unwrap_or(0);
            ExposureError::OrphanOutcomeUnit { id: ds.outcome_units[i].id.clone() }
        }
        other => other,
    })?;
    let (g, g_max) = rescale_by_max(&g_raw);
    Ok(ExposureTable {
        outcome_ids: ds.outcome_units.iter().map(|u| u.id.clone()).collect(),
        key_associated_ids: key.iter().map(|&j| ds.interventional_units[j].id.clone()).collect(),
        key_associated: key,
        z,
        g_raw,
        g,
        g_max,
    })
}

/// Discrete distribution over observed upwind-treatment values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GDistribution {
    /// `(value, probability)` pairs, ascending by value, distinct values.
    pub atoms: Vec<(f64, f64)>,
}

impl GDistribution {
    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(v, p)| v * p).sum()
    }

    /// Expectation of `f` under the distribution.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&(v, p)| p * f(v)).sum()
    }
}

/// Each observed value gets weight `1/n`; repeated values merge into one atom.
pub fn empirical_g_distribution(g: &[f64]) -> Result<GDistribution, ExposureError> {
    if g.is_empty() {
        return Err(ExposureError::EmptySample);
    }
    let mut sorted = g.to_vec();
    sorted.sort_by(f64::total_cmp);
    let w = 1.0 / g.len() as f64;
    let mut atoms: Vec<(f64, usize)> = Vec::new();
    for v in sorted {
        match atoms.last_mut() {
            Some((last, count)) if *last == v => *count += 1,
            _ => atoms.push((v, 1)),
        }
    }
    Ok(GDistribution { atoms: atoms.into_iter().map(|(v, c)| (v, c as f64 * w)).collect() })
}
