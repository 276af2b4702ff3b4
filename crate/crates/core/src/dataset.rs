//! Clustered data: outcome, unit membership and individual-level covariates.
//!
//! Units are stored as dense indices `0..n` in first-appearance order; the
//! original labels are kept for reporting and for matching units across
//! data sets (training folds, prediction files).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Binary,
    Ordinal,
}

impl std::str::FromStr for CovariateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" => Ok(Self::Continuous),
            "binary" => Ok(Self::Binary),
            "ordinal" => Ok(Self::Ordinal),
            other => Err(Error::Config(format!(
                "unknown covariate kind `{other}` (expected continuous, binary or ordinal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateMeta {
    pub name: String,
    pub kind: CovariateKind,
    /// Observed distinct values, strictly increasing.
    pub values: Vec<f64>,
}

impl CovariateMeta {
    fn from_column(name: &str, column: &[f64], kind: Option<CovariateKind>) -> Result<Self> {
        let mut values: Vec<f64> = column.to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup();
        if values.is_empty() {
            return Err(Error::Validation(format!("covariate `{name}` has no observations")));
        }
        let is_binary = values.iter().all(|&v| v == 0.0 || v == 1.0);
        let kind = match kind {
            Some(CovariateKind::Binary) if !is_binary => {
                return Err(Error::Validation(format!(
                    "covariate `{name}` declared binary but has values outside {{0, 1}}"
                )))
            }
            Some(CovariateKind::Ordinal) if values.iter().any(|v| v.fract() != 0.0) => {
                return Err(Error::Validation(format!(
                    "covariate `{name}` declared ordinal but has non-integer values"
                )))
            }
            Some(kind) => kind,
            None if is_binary => CovariateKind::Binary,
            None => CovariateKind::Continuous,
        };
        Ok(Self { name: name.to_string(), kind, values })
    }
}

#[derive(Debug, Clone)]
pub struct ClusteredDataset {
    outcome_name: String,
    y: Vec<f64>,
    unit: Vec<usize>,
    unit_labels: Vec<String>,
    columns: Vec<Vec<f64>>,
    meta: Vec<CovariateMeta>,
    unit_rows: Vec<Vec<usize>>,
}

impl ClusteredDataset {
    /// Builds a dataset from unit labels; units are indexed in order of first appearance.
    ///
    /// `columns` holds one vector per covariate. `kinds` may override the
    /// automatic binary/continuous detection per covariate.
    pub fn from_labels<S: AsRef<str>>(
        y: Vec<f64>,
        labels: &[S],
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        kinds: &[Option<CovariateKind>],
    ) -> Result<Self> {
        if labels.len() != y.len() {
            return Err(Error::Validation(format!(
                "{} unit labels for {} outcome values",
                labels.len(),
                y.len()
            )));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut unit_labels = Vec::new();
        let mut unit = Vec::with_capacity(y.len());
        for label in labels {
            let label = label.as_ref();
            let next = index.len();
            let id = *index.entry(label).or_insert_with(|| {
                unit_labels.push(label.to_string());
                next
            });
            unit.push(id);
        }
        Self::new(y, unit, unit_labels, names, columns, kinds)
    }

    /// Builds a dataset from dense unit indices `0..unit_labels.len()`.
    pub fn new(
        y: Vec<f64>,
        unit: Vec<usize>,
        unit_labels: Vec<String>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        kinds: &[Option<CovariateKind>],
    ) -> Result<Self> {
        let n_obs = y.len();
        if n_obs == 0 {
            return Err(Error::Validation("dataset has no observations".into()));
        }
        if unit.len() != n_obs {
            return Err(Error::Validation(format!(
                "{} unit indices for {n_obs} outcome values",
                unit.len()
            )));
        }
        if names.len() != columns.len() {
            return Err(Error::Validation(format!(
                "{} covariate names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("outcome at row {} is not finite", i + 1)));
        }
        let n_units = unit_labels.len();
        let mut unit_rows = vec![Vec::new(); n_units];
        for (row, &u) in unit.iter().enumerate() {
            if u >= n_units {
                return Err(Error::Validation(format!(
                    "row {} refers to unit index {u} but only {n_units} units are labelled",
                    row + 1
                )));
            }
            unit_rows[u].push(row);
        }
        if let Some(empty) = unit_rows.iter().position(Vec::is_empty) {
            return Err(Error::Validation(format!(
                "unit `{}` has zero rows",
                unit_labels[empty]
            )));
        }
        let mut meta = Vec::with_capacity(columns.len());
        for (k, (name, column)) in names.iter().zip(&columns).enumerate() {
            if column.len() != n_obs {
                return Err(Error::Validation(format!(
                    "covariate `{name}` has {} values, expected {n_obs}",
                    column.len()
                )));
            }
            if let Some(i) = column.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "covariate `{name}` at row {} is not finite",
                    i + 1
                )));
            }
            meta.push(CovariateMeta::from_column(name, column, kinds.get(k).copied().flatten())?);
        }
        Ok(Self {
            outcome_name: "y".into(),
            y,
            unit,
            unit_labels,
            columns,
            meta,
            unit_rows,
        })
    }

    pub fn with_outcome_name(mut self, name: impl Into<String>) -> Self {
        self.outcome_name = name.into();
        self
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_units(&self) -> usize {
        self.unit_labels.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.columns.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn units(&self) -> &[usize] {
        &self.unit
    }

    pub fn unit_of(&self, row: usize) -> usize {
        self.unit[row]
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn unit_rows(&self, unit: usize) -> &[usize] {
        &self.unit_rows[unit]
    }

    /// Row counts `n_i` per unit.
    pub fn unit_sizes(&self) -> Vec<usize> {
        self.unit_rows.iter().map(Vec::len).collect()
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.columns[k]
    }

    pub fn x(&self, row: usize, k: usize) -> f64 {
        self.columns[k][row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn meta(&self) -> &[CovariateMeta] {
        &self.meta
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.meta.iter().map(|m| m.name.clone()).collect()
    }

    /// Per-unit outcome means `ȳ_i`.
    pub fn unit_means(&self) -> Vec<f64> {
        self.unit_rows
            .iter()
            .map(|rows| rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64)
            .collect()
    }

    /// Restricts the dataset to `rows`; units are re-indexed by first appearance
    /// among the kept rows and keep their labels.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let y = rows.iter().map(|&r| self.y[r]).collect();
        let labels: Vec<&str> = rows.iter().map(|&r| self.unit_labels[self.unit[r]].as_str()).collect();
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&r| c[r]).collect())
            .collect();
        let kinds: Vec<Option<CovariateKind>> = self.meta.iter().map(|m| Some(m.kind)).collect();
        Ok(Self::from_labels(y, &labels, self.covariate_names(), columns, &kinds)?
            .with_outcome_name(self.outcome_name.clone()))
    }

    /// Writes the dataset as CSV with columns `unit, <outcome>, <covariates...>`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["unit".to_string(), self.outcome_name.clone()];
        header.extend(self.covariate_names());
        w.write_record(&header)?;
        for row in 0..self.n_obs() {
            let mut record = vec![self.unit_labels[self.unit[row]].clone(), self.y[row].to_string()];
            record.extend(self.columns.iter().map(|c| c[row].to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column selection for [`load_csv`].
#[derive(Debug, Clone, Default)]
pub struct CsvColumns {
    pub outcome: String,
    pub unit: String,
    pub covariates: Vec<String>,
    /// Optional kind overrides, keyed by covariate name.
    pub kinds: HashMap<String, CovariateKind>,
}

pub fn load_csv(path: impl AsRef<Path>, columns: &CsvColumns) -> Result<ClusteredDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Load(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, columns)
}

pub fn read_csv<R: Read>(reader: R, columns: &CsvColumns) -> Result<ClusteredDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Load(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Error::Load("empty file".into()));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Load(format!("missing column `{name}`")))
    };
    let y_col = find(&columns.outcome)?;
    let unit_col = find(&columns.unit)?;
    let cov_cols = columns
        .covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    for name in columns.kinds.keys() {
        if !columns.covariates.contains(name) {
            return Err(Error::Load(format!("kind override for unknown covariate `{name}`")));
        }
    }

    let mut y = Vec::new();
    let mut labels = Vec::new();
    let mut data = vec![Vec::new(); cov_cols.len()];
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Load(format!("row {row}: {e}")))?;
        let cell = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Load(format!("row {row}, column `{name}`: non-numeric value `{raw}`"))
                })
        };
        y.push(cell(y_col, &columns.outcome)?);
        let label = record.get(unit_col).unwrap_or("");
        if label.is_empty() {
            return Err(Error::Load(format!(
                "row {row}, column `{}`: missing unit label",
                columns.unit
            )));
        }
        labels.push(label.to_string());
        for (k, &col) in cov_cols.iter().enumerate() {
            data[k].push(cell(col, &columns.covariates[k])?);
        }
    }
    if y.is_empty() {
        return Err(Error::Load("empty file: no data rows".into()));
    }
    let kinds: Vec<Option<CovariateKind>> = columns
        .covariates
        .iter()
        .map(|c| columns.kinds.get(c).copied())
        .collect();
    Ok(
        ClusteredDataset::from_labels(y, &labels, columns.covariates.clone(), data, &kinds)?
            .with_outcome_name(columns.outcome.clone()),
    )
}

/// Fold index per row for k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold: Vec<usize>,
}

impl FoldAssignment {
    pub fn train_rows(&self, f: usize) -> Vec<usize> {
        (0..self.fold.len()).filter(|&r| self.fold[r] != f).collect()
    }

    pub fn test_rows(&self, f: usize) -> Vec<usize> {
        (0..self.fold.len()).filter(|&r| self.fold[r] == f).collect()
    }
}

/// Assigns rows to `k` folds, stratified within units.
///
/// Each unit's rows are shuffled and dealt round-robin; the dealing position
/// carries over from one unit to the next so overall fold sizes stay balanced.
pub fn assign_folds(d: &ClusteredDataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be at least 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; d.n_obs()];
    let mut next = 0;
    for unit in 0..d.n_units() {
        let mut rows = d.unit_rows(unit).to_vec();
        rows.shuffle(&mut rng);
        for r in rows {
            fold[r] = next % k;
            next += 1;
        }
    }
    Ok(FoldAssignment { k, fold })
}
