//! Domain types for the bipartite problem and CSV ingestion.
//!
//! Interventional units carry the binary treatment; outcome units carry the
//! response and its exposure denominator; the interference map links them
//! with strictly positive weights stored sparsely. Internal indices follow
//! file order and ids are opaque strings.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::exposure::ExposureTable;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file} line {line}: treatment for `{id}` must be 0 or 1, got `{value}`")]
    NonBinaryTreatment { file: String, line: usize, id: String, value: String },
    #[error("{file} line {line}: weight {weight} for ({outcome_id}, {interventional_id}) must be strictly positive")]
    NegativeWeight { file: String, line: usize, outcome_id: String, interventional_id: String, weight: f64 },
    #[error("outcome unit `{id}` has no interference entries")]
    OrphanOutcomeUnit { id: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{file} line {line}: column `{column}` has invalid value `{value}`: {reason}")]
    InvalidValue { file: String, line: usize, column: String, value: String, reason: String },
    #[error("{file}: duplicate id `{id}`")]
    DuplicateId { file: String, id: String },
    #[error("{file} line {line}: duplicate entry ({outcome_id}, {interventional_id})")]
    DuplicateEntry { file: String, line: usize, outcome_id: String, interventional_id: String },
    #[error("{file} line {line}: unknown {kind} id `{id}`")]
    UnknownId { file: String, line: usize, kind: &'static str, id: String },
    #[error("schema role `{role}` references unknown covariate `{name}`")]
    UnknownCovariate { role: &'static str, name: String },
    #[error("{0}")]
    InvalidSchema(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

impl DataError {
    pub fn code(&self) -> &'static str {
        match self {
            DataError::MissingColumn { .. } => "missing_column",
            DataError::NonBinaryTreatment { .. } => "non_binary_treatment",
            DataError::NegativeWeight { .. } => "negative_weight",
            DataError::OrphanOutcomeUnit { .. } => "orphan_outcome_unit",
            DataError::DimensionMismatch(_) => "dimension_mismatch",
            DataError::InvalidValue { .. } => "invalid_value",
            DataError::DuplicateId { .. } => "duplicate_id",
            DataError::DuplicateEntry { .. } => "duplicate_entry",
            DataError::UnknownId { .. } => "unknown_id",
            DataError::UnknownCovariate { .. } => "unknown_covariate",
            DataError::InvalidSchema(_) => "invalid_schema",
            DataError::Io { .. } => "io",
            DataError::Csv { .. } => "csv",
            DataError::Json { .. } => "json",
        }
    }
}

/// Outcome regression family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFamily {
    #[default]
    PoissonOffset,
    Normal,
}

/// Which covariates enter which model. `x_int_*` names refer to interventional
/// columns (joined through the key-associated unit), `x_out_*` to outcome columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSchema {
    #[serde(default)]
    pub x_int_z: Vec<String>,
    #[serde(default)]
    pub x_out_z: Vec<String>,
    #[serde(default)]
    pub x_int_g: Vec<String>,
    #[serde(default)]
    pub x_out_g: Vec<String>,
    #[serde(default)]
    pub x_out_outcome: Vec<String>,
    #[serde(default)]
    pub family: OutcomeFamily,
}

impl CovariateSchema {
    pub fn from_json_file(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|source| DataError::Json { path: path.display().to_string(), source })
    }

    /// Checks every role against the declared covariate names.
    pub fn validate(&self, interventional: &[String], outcome: &[String]) -> Result<(), DataError> {
        let check = |role: &'static str, names: &[String], known: &[String]| -> Result<(), DataError> {
            let mut seen = HashSet::new();
            for n in names {
                if !known.contains(n) {
                    return Err(DataError::UnknownCovariate { role, name: n.clone() });
                }
                if !seen.insert(n) {
                    return Err(DataError::InvalidSchema(format!("role `{role}` lists `{n}` twice")));
                }
            }
            Ok(())
        };
        check("x_int_z", &self.x_int_z, interventional)?;
        check("x_out_z", &self.x_out_z, outcome)?;
        check("x_int_g", &self.x_int_g, interventional)?;
        check("x_out_g", &self.x_out_g, outcome)?;
        check("x_out_outcome", &self.x_out_outcome, outcome)?;
        if self.x_int_z.is_empty() && self.x_out_z.is_empty() {
            return Err(DataError::InvalidSchema("the key-associated propensity model needs at least one covariate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionalUnit {
    pub id: String,
    pub treated: bool,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeUnit {
    pub id: String,
    pub outcome: f64,
    /// Person-time at risk; 1.0 when unused.
    pub offset_exposure: f64,
    pub covariates: Vec<f64>,
}

/// Sparse `N x J` weight matrix in compressed-row form, columns ascending within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceMap {
    n_outcome: usize,
    n_interventional: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl InterferenceMap {
    /// Builds the map from `(outcome index, interventional index, weight)` triplets.
    pub fn from_triplets(n_outcome: usize, n_interventional: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self, DataError> {
        for &(i, j, w) in &triplets {
            if i >= n_outcome || j >= n_interventional {
                return Err(DataError::DimensionMismatch(format!(
                    "entry ({i}, {j}) outside a {n_outcome} x {n_interventional} map"
                )));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(DataError::NegativeWeight {
                    file: "<memory>".into(),
                    line: 0,
                    outcome_id: format!("#{i}"),
                    interventional_id: format!("#{j}"),
                    weight: w,
                });
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in triplets.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(DataError::DuplicateEntry {
                    file: "<memory>".into(),
                    line: 0,
                    outcome_id: format!("#{}", w[0].0),
                    interventional_id: format!("#{}", w[0].1),
                });
            }
        }
        let mut row_ptr = vec![0usize; n_outcome + 1];
        for &(i, _, _) in &triplets {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n_outcome {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = triplets.iter().map(|t| t.1).collect();
        let weights = triplets.iter().map(|t| t.2).collect();
        Ok(Self { n_outcome, n_interventional, row_ptr, cols, weights })
    }

    /// Sparsifies a dense row-major matrix, dropping exact zeros.
    pub fn from_dense(dense: &[Vec<f64>], n_interventional: usize) -> Result<Self, DataError> {
        let mut triplets = Vec::new();
        for (i, row) in dense.iter().enumerate() {
            if row.len() != n_interventional {
                return Err(DataError::DimensionMismatch(format!("dense row {i} has {} columns", row.len())));
            }
            for (j, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    triplets.push((i, j, w));
                }
            }
        }
        Self::from_triplets(dense.len(), n_interventional, triplets)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_interventional]; self.n_outcome];
        for (i, j, w) in self.entries() {
            d[i][j] = w;
        }
        d
    }

    pub fn n_outcome(&self) -> usize {
        self.n_outcome
    }

    pub fn n_interventional(&self) -> usize {
        self.n_interventional
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// Interventional indices (ascending) and weights of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.weights[a..b])
    }

    pub fn row_total(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    /// All stored entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_outcome).flat_map(move |i| {
            let (c, w) = self.row(i);
            c.iter().zip(w).map(move |(&j, &wt)| (i, j, wt))
        })
    }

    /// Map with every weight multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for w in &mut out.weights {
            *w *= c;
        }
        out
    }

    /// Sub-map keeping the listed outcome rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        for &i in rows {
            let (c, w) = self.row(i);
            cols.extend_from_slice(c);
            weights.extend_from_slice(w);
            row_ptr.push(cols.len());
        }
        Self { n_outcome: rows.len(), n_interventional: self.n_interventional, row_ptr, cols, weights }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteDataset {
    pub interventional_covariates: Vec<String>,
    pub outcome_covariates: Vec<String>,
    pub interventional_units: Vec<InterventionalUnit>,
    pub outcome_units: Vec<OutcomeUnit>,
    pub interference: InterferenceMap,
    pub schema: CovariateSchema,
}

impl BipartiteDataset {
    /// Assembles and validates a dataset.
    pub fn new(
        interventional_covariates: Vec<String>,
        outcome_covariates: Vec<String>,
        interventional_units: Vec<InterventionalUnit>,
        outcome_units: Vec<OutcomeUnit>,
        interference: InterferenceMap,
        schema: CovariateSchema,
    ) -> Result<Self, DataError> {
        let ds = Self { interventional_covariates, outcome_covariates, interventional_units, outcome_units, interference, schema };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.interference.n_outcome() != self.outcome_units.len()
            || self.interference.n_interventional() != self.interventional_units.len()
        {
            return Err(DataError::DimensionMismatch(format!(
                "interference map is {} x {} but there are {} outcome and {} interventional units",
                self.interference.n_outcome(),
                self.interference.n_interventional(),
                self.outcome_units.len(),
                self.interventional_units.len()
            )));
        }
        let mut ids = HashSet::new();
        for u in &self.interventional_units {
            if u.covariates.len() != self.interventional_covariates.len() {
                return Err(DataError::DimensionMismatch(format!(
                    "interventional unit `{}` has {} covariates, schema has {}",
                    u.id,
                    u.covariates.len(),
                    self.interventional_covariates.len()
                )));
            }
            if !ids.insert(u.id.as_str()) {
                return Err(DataError::DuplicateId { file: "interventional".into(), id: u.id.clone() });
            }
        }
        let mut ids = HashSet::new();
        for (i, u) in self.outcome_units.iter().enumerate() {
            if u.covariates.len() != self.outcome_covariates.len() {
                return Err(DataError::DimensionMismatch(format!(
                    "outcome unit `{}` has {} covariates, schema has {}",
                    u.id,
                    u.covariates.len(),
                    self.outcome_covariates.len()
                )));
            }
            if !ids.insert(u.id.as_str()) {
                return Err(DataError::DuplicateId { file: "outcome".into(), id: u.id.clone() });
            }
            if !(u.offset_exposure > 0.0) || !u.offset_exposure.is_finite() {
                return Err(DataError::InvalidValue {
                    file: "outcome".into(),
                    line: i + 2,
                    column: "offset".into(),
                    value: u.offset_exposure.to_string(),
                    reason: "must be positive and finite".into(),
                });
            }
            if !u.outcome.is_finite() || (self.schema.family == OutcomeFamily::PoissonOffset && u.outcome < 0.0) {
                return Err(DataError::InvalidValue {
                    file: "outcome".into(),
                    line: i + 2,
                    column: "outcome".into(),
                    value: u.outcome.to_string(),
                    reason: "must be finite and nonnegative for the Poisson family".into(),
                });
            }
            if self.interference.row(i).0.is_empty() {
                return Err(DataError::OrphanOutcomeUnit { id: u.id.clone() });
            }
        }
        self.schema.validate(&self.interventional_covariates, &self.outcome_covariates)
    }

    pub fn n_outcome(&self) -> usize {
        self.outcome_units.len()
    }

    pub fn n_interventional(&self) -> usize {
        self.interventional_units.len()
    }

    pub fn treatments(&self) -> Vec<bool> {
        self.interventional_units.iter().map(|u| u.treated).collect()
    }

    pub fn interventional_column(&self, name: &str) -> Option<usize> {
        self.interventional_covariates.iter().position(|c| c == name)
    }

    pub fn outcome_column(&self, name: &str) -> Option<usize> {
        self.outcome_covariates.iter().position(|c| c == name)
    }

    /// Outcome units whose total interference weight strictly exceeds `threshold`.
    pub fn eligible_by_total_weight(&self, threshold: f64) -> Vec<bool> {
        (0..self.n_outcome()).map(|i| self.interference.row_total(i) > threshold).collect()
    }

    /// Dataset restricted to the outcome units flagged in `keep`; interventional units unchanged.
    pub fn restrict_outcome_units(&self, keep: &[bool]) -> Result<Self, DataError> {
        if keep.len() != self.n_outcome() {
            return Err(DataError::DimensionMismatch(format!("keep mask has {} entries for {} units", keep.len(), self.n_outcome())));
        }
        let rows: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
        if rows.is_empty() {
            return Err(DataError::DimensionMismatch("no outcome units remain after filtering".into()));
        }
        let outcome_units = rows.iter().map(|&i| self.outcome_units[i].clone()).collect();
        Self::new(
            self.interventional_covariates.clone(),
            self.outcome_covariates.clone(),
            self.interventional_units.clone(),
            outcome_units,
            self.interference.select_rows(&rows),
            self.schema.clone(),
        )
    }
}

/// Paths of the three dataset CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub interventional: PathBuf,
    pub outcome: PathBuf,
    pub interference: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            interventional: dir.join("interventional.csv"),
            outcome: dir.join("outcome.csv"),
            interference: dir.join("interference.csv"),
        }
    }
}

fn open_csv(path: &Path) -> Result<(csv::Reader<File>, Vec<String>), DataError> {
    let file = File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|source| DataError::Csv { path: path.display().to_string(), source })?
        .iter()
        .map(str::to_string)
        .collect();
    Ok((rdr, headers))
}

fn column(file: &str, headers: &[String], name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::MissingColumn { file: file.to_string(), column: name.to_string() })
}

fn parse_f64(file: &str, line: usize, column: &str, raw: &str) -> Result<f64, DataError> {
    let v: f64 = raw.parse().map_err(|_| DataError::InvalidValue {
        file: file.into(),
        line,
        column: column.into(),
        value: raw.into(),
        reason: "not a number".into(),
    })?;
    if !v.is_finite() {
        return Err(DataError::InvalidValue { file: file.into(), line, column: column.into(), value: raw.into(), reason: "not finite".into() });
    }
    Ok(v)
}

fn file_label(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned())
}

/// Loads and validates the three CSV files against `schema`.
pub fn load_dataset(paths: &DatasetPaths, schema: &CovariateSchema) -> Result<BipartiteDataset, DataError> {
    // interventional units
    let path = &paths.interventional;
    let label = file_label(path);
    let (mut rdr, headers) = open_csv(path)?;
    let id_col = column(&label, &headers, "id")?;
    let treated_col = column(&label, &headers, "treated")?;
    let cov_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != id_col && c != treated_col).collect();
    let int_names: Vec<String> = cov_cols.iter().map(|&c| headers[c].clone()).collect();
    let mut interventional = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|source| DataError::Csv { path: path.display().to_string(), source })?;
        if rec.len() != headers.len() {
            return Err(DataError::DimensionMismatch(format!("{label} line {line}: {} fields, header has {}", rec.len(), headers.len())));
        }
        let id = rec[id_col].to_string();
        let treated = match &rec[treated_col] {
            "0" => false,
            "1" => true,
            other => return Err(DataError::NonBinaryTreatment { file: label.clone(), line, id, value: other.to_string() }),
        };
        let covariates = cov_cols.iter().map(|&c| parse_f64(&label, line, &headers[c], &rec[c])).collect::<Result<_, _>>()?;
        interventional.push(InterventionalUnit { id, treated, covariates });
    }

    // outcome units
    let path = &paths.outcome;
    let label = file_label(path);
    let (mut rdr, headers) = open_csv(path)?;
    let id_col = column(&label, &headers, "id")?;
    let y_col = column(&label, &headers, "outcome")?;
    let off_col = column(&label, &headers, "offset")?;
    let cov_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != id_col && c != y_col && c != off_col).collect();
    let out_names: Vec<String> = cov_cols.iter().map(|&c| headers[c].clone()).collect();
    let mut outcome = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|source| DataError::Csv { path: path.display().to_string(), source })?;
        if rec.len() != headers.len() {
            return Err(DataError::DimensionMismatch(format!("{label} line {line}: {} fields, header has {}", rec.len(), headers.len())));
        }
        let y = parse_f64(&label, line, "outcome", &rec[y_col])?;
        let off = parse_f64(&label, line, "offset", &rec[off_col])?;
        if !(off > 0.0) {
            return Err(DataError::InvalidValue {
                file: label.clone(),
                line,
                column: "offset".into(),
                value: rec[off_col].to_string(),
                reason: "must be positive".into(),
            });
        }
        if schema.family == OutcomeFamily::PoissonOffset && y < 0.0 {
            return Err(DataError::InvalidValue {
                file: label.clone(),
                line,
                column: "outcome".into(),
                value: rec[y_col].to_string(),
                reason: "must be nonnegative for the Poisson family".into(),
            });
        }
        let covariates = cov_cols.iter().map(|&c| parse_f64(&label, line, &headers[c], &rec[c])).collect::<Result<_, _>>()?;
        outcome.push(OutcomeUnit { id: rec[id_col].to_string(), outcome: y, offset_exposure: off, covariates });
    }

    let int_index = index_ids(&file_label(&paths.interventional), interventional.iter().map(|u| u.id.as_str()))?;
    let out_index = index_ids(&file_label(&paths.outcome), outcome.iter().map(|u| u.id.as_str()))?;

    // interference triplets
    let path = &paths.interference;
    let label = file_label(path);
    let (mut rdr, headers) = open_csv(path)?;
    let oc = column(&label, &headers, "outcome_id")?;
    let ic = column(&label, &headers, "interventional_id")?;
    let wc = column(&label, &headers, "weight")?;
    let mut triplets = Vec::new();
    let mut seen = HashSet::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|source| DataError::Csv { path: path.display().to_string(), source })?;
        let (oid, iid) = (&rec[oc], &rec[ic]);
        let w = parse_f64(&label, line, "weight", &rec[wc])?;
        if !(w > 0.0) {
            return Err(DataError::NegativeWeight {
                file: label.clone(),
                line,
                outcome_id: oid.to_string(),
                interventional_id: iid.to_string(),
                weight: w,
            });
        }
        let i = *out_index
            .get(oid)
            .ok_or_else(|| DataError::UnknownId { file: label.clone(), line, kind: "outcome", id: oid.to_string() })?;
        let j = *int_index
            .get(iid)
            .ok_or_else(|| DataError::UnknownId { file: label.clone(), line, kind: "interventional", id: iid.to_string() })?;
        if !seen.insert((i, j)) {
            return Err(DataError::DuplicateEntry { file: label.clone(), line, outcome_id: oid.to_string(), interventional_id: iid.to_string() });
        }
        triplets.push((i, j, w));
    }
    let map = InterferenceMap::from_triplets(outcome.len(), interventional.len(), triplets)?;
    BipartiteDataset::new(int_names, out_names, interventional, outcome, map, schema.clone())
}

fn index_ids<'a>(label: &str, ids: impl Iterator<Item = &'a str>) -> Result<HashMap<String, usize>, DataError> {
    let mut map = HashMap::new();
    for (k, id) in ids.enumerate() {
        if map.insert(id.to_string(), k).is_some() {
            return Err(DataError::DuplicateId { file: label.to_string(), id: id.to_string() });
        }
    }
    Ok(map)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> DataError + '_ {
    move |source| DataError::Csv { path: path.display().to_string(), source }
}

/// Writes the dataset as the three CSV files in `dir`. Floats use the
/// shortest representation that parses back to the same bits.
pub fn write_dataset(ds: &BipartiteDataset, dir: &Path) -> Result<DatasetPaths, DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let paths = DatasetPaths::in_dir(dir);

    let mut w = csv::Writer::from_path(&paths.interventional).map_err(csv_err(&paths.interventional))?;
    let mut header = vec!["id".to_string(), "treated".to_string()];
    header.extend(ds.interventional_covariates.iter().cloned());
    w.write_record(&header).map_err(csv_err(&paths.interventional))?;
    for u in &ds.interventional_units {
        let mut rec = vec![u.id.clone(), if u.treated { "1" } else { "0" }.to_string()];
        rec.extend(u.covariates.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err(&paths.interventional))?;
    }
    w.flush().map_err(io_err(&paths.interventional))?;

    let mut w = csv::Writer::from_path(&paths.outcome).map_err(csv_err(&paths.outcome))?;
    let mut header = vec!["id".to_string(), "outcome".to_string(), "offset".to_string()];
    header.extend(ds.outcome_covariates.iter().cloned());
    w.write_record(&header).map_err(csv_err(&paths.outcome))?;
    for u in &ds.outcome_units {
        let mut rec = vec![u.id.clone(), u.outcome.to_string(), u.offset_exposure.to_string()];
        rec.extend(u.covariates.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err(&paths.outcome))?;
    }
    w.flush().map_err(io_err(&paths.outcome))?;

    let mut w = csv::Writer::from_path(&paths.interference).map_err(csv_err(&paths.interference))?;
    w.write_record(["outcome_id", "interventional_id", "weight"]).map_err(csv_err(&paths.interference))?;
    for (i, j, wt) in ds.interference.entries() {
        w.write_record([ds.outcome_units[i].id.as_str(), ds.interventional_units[j].id.as_str(), &wt.to_string()])
            .map_err(csv_err(&paths.interference))?;
    }
    w.flush().map_err(io_err(&paths.interference))?;
    Ok(paths)
}

/// Where a summarized covariate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSource {
    Exposure,
    Outcome,
    /// Covariate of the key-associated interventional unit.
    Interventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub source: CovariateSource,
    pub name: String,
    /// `None` when the group is empty.
    pub mean_z0: Option<f64>,
    pub mean_z1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub n_z0: usize,
    pub n_z1: usize,
    pub rows: Vec<SummaryRow>,
}

/// Covariate means by key-associated treatment group: the upwind treatment,
/// every outcome covariate, then every covariate of the key-associated unit.
pub fn summarize_by_treatment(ds: &BipartiteDataset, exposures: &ExposureTable) -> Result<CovariateSummary, DataError> {
    if exposures.len() != ds.n_outcome() {
        return Err(DataError::DimensionMismatch(format!("{} exposures for {} outcome units", exposures.len(), ds.n_outcome())));
    }
    let n = ds.n_outcome();
    let n_z1 = exposures.z.iter().filter(|&&z| z).count();
    let n_z0 = n - n_z1;
    let group_means = |value: &dyn Fn(usize) -> f64| {
        let (mut s0, mut s1) = (0.0, 0.0);
        for i in 0..n {
            if exposures.z[i] {
                s1 += value(i);
            } else {
                s0 += value(i);
            }
        }
        ((n_z0 > 0).then(|| s0 / n_z0 as f64), (n_z1 > 0).then(|| s1 / n_z1 as f64))
    };
    let mut rows = Vec::new();
    let (m0, m1) = group_means(&|i| exposures.g[i]);
    rows.push(SummaryRow { source: CovariateSource::Exposure, name: "G".into(), mean_z0: m0, mean_z1: m1 });
    for (c, name) in ds.outcome_covariates.iter().enumerate() {
        let (m0, m1) = group_means(&|i| ds.outcome_units[i].covariates[c]);
        rows.push(SummaryRow { source: CovariateSource::Outcome, name: name.clone(), mean_z0: m0, mean_z1: m1 });
    }
    for (c, name) in ds.interventional_covariates.iter().enumerate() {
        let (m0, m1) = group_means(&|i| ds.interventional_units[exposures.key_associated[i]].covariates[c]);
        rows.push(SummaryRow { source: CovariateSource::Interventional, name: name.clone(), mean_z0: m0, mean_z1: m1 });
    }
    Ok(CovariateSummary { n_z0, n_z1, rows })
}

impl CovariateSummary {
    /// CSV with columns `source,covariate,mean_z0,mean_z1`; empty groups print `NA`.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut f = File::create(path).map_err(io_err(path))?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::from("source,covariate,mean_z0,mean_z1\n");
        for r in &self.rows {
            let src = match r.source {
                CovariateSource::Exposure => "exposure",
                CovariateSource::Outcome => "outcome",
                CovariateSource::Interventional => "interventional",
            };
            out.push_str(&format!("{src},{},{},{}\n", r.name, fmt(r.mean_z0), fmt(r.mean_z1)));
        }
        f.write_all(out.as_bytes()).map_err(io_err(path))
    }
}
