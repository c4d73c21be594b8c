//! Datasets, CSV ingestion, unit-cube normalization and train/validation
//! partitioning.
//!
//! Features are stored row-major in one flat buffer. A [`Dataset`] is
//! immutable once built; every transformation returns a new one.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Support assumption carried by a dataset's features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    /// Every value lies in `[0, 1]`.
    Continuous,
    /// Every value is exactly `0` or `1`.
    Binary,
    /// Unscaled reals, e.g. freshly loaded CSV columns or appended projections.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    targets: Vec<f64>,
    n: usize,
    p: usize,
    mode: FeatureMode,
}

impl Dataset {
    /// Builds a dataset from a row-major buffer, validating the invariants of `mode`.
    pub fn from_flat(features: Vec<f64>, p: usize, targets: Vec<f64>, mode: FeatureMode) -> Result<Self> {
        let n = targets.len();
        if n == 0 || p == 0 {
            return Err(Error::InvalidDataset(format!("need n >= 1 and p >= 1, got n={n}, p={p}")));
        }
        if features.len() != n * p {
            return Err(Error::InvalidDataset(format!(
                "feature buffer has {} values, expected {n} x {p}",
                features.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite feature at row {}", pos / p)));
        }
        if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite target at row {i}")));
        }
        match mode {
            FeatureMode::Continuous => {
                if let Some(pos) = features.iter().position(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidDataset(format!(
                        "continuous feature outside [0, 1] at row {}, column {}",
                        pos / p,
                        pos % p
                    )));
                }
            }
            FeatureMode::Binary => {
                if let Some(pos) = features.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidDataset(format!(
                        "binary feature not in {{0, 1}} at row {}, column {}",
                        pos / p,
                        pos % p
                    )));
                }
            }
            FeatureMode::Raw => {}
        }
        Ok(Self { features, targets, n, p, mode })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>, mode: FeatureMode) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::InvalidDataset(format!("row {bad} has a different width than row 0")));
        }
        if rows.len() != targets.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        Self::from_flat(rows.concat(), p, targets, mode)
    }

    /// Like [`Dataset::from_flat`] but picks the tightest mode the values satisfy.
    pub fn infer(features: Vec<f64>, p: usize, targets: Vec<f64>) -> Result<Self> {
        let mode = infer_mode(&features);
        Self::from_flat(features, p, targets, mode)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.p)
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.features[i * self.p + j]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// New dataset holding the given rows, in the given order. Repeats are allowed.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.p);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Dataset { features, targets, n: indices.len(), p: self.p, mode: self.mode }
    }

    /// Same features, new targets.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Dataset> {
        Self::from_flat(self.features.clone(), self.p, targets, self.mode)
    }
}

fn infer_mode(features: &[f64]) -> FeatureMode {
    if features.iter().all(|&v| v == 0.0 || v == 1.0) {
        FeatureMode::Binary
    } else if features.iter().all(|v| (0.0..=1.0).contains(v)) {
        FeatureMode::Continuous
    } else {
        FeatureMode::Raw
    }
}

/// Which CSV column holds the response.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TargetColumn {
    Named(String),
    #[default]
    Last,
}

/// Loads a comma-separated file with a mandatory header row.
///
/// The result is un-normalized; its mode is `Binary` when every feature value
/// is 0 or 1 and `Raw` otherwise. Parse errors name the file line (the header
/// is line 1) and the column header.
pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile { path: path.to_path_buf() });
    }
    let target_idx = match target {
        TargetColumn::Last => headers.len() - 1,
        TargetColumn::Named(name) => headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))?,
    };
    let p = headers.len() - 1;
    if p == 0 {
        return Err(Error::InvalidDataset("csv has no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |pos| pos.line() as usize);
        for (j, cell) in record.iter().enumerate() {
            let value = cell
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::ParseCell {
                    row: line,
                    column: headers.get(j).unwrap_or_default().to_string(),
                    value: cell.to_string(),
                })?;
            if j == target_idx {
                targets.push(value);
            } else {
                features.push(value);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::EmptyFile { path: path.to_path_buf() });
    }
    let mode = if features.iter().all(|&v| v == 0.0 || v == 1.0) {
        FeatureMode::Binary
    } else {
        FeatureMode::Raw
    };
    Dataset::from_flat(features, p, targets, mode)
}

/// Per-feature `(min, max)` observed on the data a normalization was fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Normalization {
    fn map(&self, j: usize, v: f64) -> f64 {
        let span = self.maxs[j] - self.mins[j];
        if span > 0.0 {
            (v - self.mins[j]) / span
        } else {
            0.0
        }
    }

    /// Applies the training transform to new data, clamping into `[0, 1]`.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.p() != self.mins.len() {
            return Err(Error::DimensionMismatch { expected: self.mins.len(), found: dataset.p() });
        }
        let mut features = dataset.features.clone();
        for row in features.chunks_exact_mut(dataset.p) {
            self.apply_row_in_place(row);
        }
        let mode = if infer_mode(&features) == FeatureMode::Binary {
            FeatureMode::Binary
        } else {
            FeatureMode::Continuous
        };
        Dataset::from_flat(features, dataset.p, dataset.targets.clone(), mode)
    }

    pub fn apply_row_in_place(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = self.map(j, *v).clamp(0.0, 1.0);
        }
    }

    /// Inverse map. Constant features come back as their single observed value.
    pub fn denormalize(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.p() != self.mins.len() {
            return Err(Error::DimensionMismatch { expected: self.mins.len(), found: dataset.p() });
        }
        let mut features = dataset.features.clone();
        for row in features.chunks_exact_mut(dataset.p) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.mins[j] + *v * (self.maxs[j] - self.mins[j]);
            }
        }
        Dataset::infer(features, dataset.p, dataset.targets.clone())
    }
}

/// Affinely maps every feature onto `[0, 1]`; constant features become 0.
pub fn minmax_normalize(dataset: &Dataset) -> (Dataset, Normalization) {
    let p = dataset.p();
    let mut mins = vec![f64::INFINITY; p];
    let mut maxs = vec![f64::NEG_INFINITY; p];
    for row in dataset.rows() {
        for (j, &v) in row.iter().enumerate() {
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    let record = Normalization { mins, maxs };
    let normalized = record.apply(dataset).expect("record fitted on this dataset");
    (normalized, record)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl SplitPlan {
    pub fn train(&self, dataset: &Dataset) -> Dataset {
        dataset.select(&self.train_indices)
    }

    pub fn val(&self, dataset: &Dataset) -> Dataset {
        dataset.select(&self.val_indices)
    }
}

/// Uniformly random partition with `ceil(train_fraction * n)` training rows.
pub fn train_val_split<R: Rng + ?Sized>(n: usize, train_fraction: f64, rng: &mut R) -> Result<SplitPlan> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    // The small slack keeps products like 0.8 * 15 from rounding up past an integer.
    let n_train = ((train_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if n < 2 || n_train == 0 || n_train >= n {
        return Err(Error::TooFewRows { n, fraction: train_fraction });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let val_indices = order.split_off(n_train);
    Ok(SplitPlan { train_indices: order, val_indices })
}
