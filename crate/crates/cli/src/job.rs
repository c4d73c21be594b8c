//! Single-dataset jobs (`refine`, `tune`, `fit`) and the saved model format.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use progressive_oblique::data::{load_csv, minmax_normalize, Dataset, Normalization, TargetColumn};
use progressive_oblique::experiments::{expand_interactions, FittedModel, MethodSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Config file for the single-dataset subcommands.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Job {
    /// CSV with a header row; relative paths resolve against the config file.
    pub data: PathBuf,
    /// Target column name; the last column when absent.
    #[serde(default)]
    pub target: Option<String>,
    /// Append pairwise products and squares after normalization.
    #[serde(default)]
    pub expand: bool,
    #[serde(default)]
    pub seed: u64,
    pub method: MethodSpec,
}

impl Job {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut job: Job = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if job.data.is_relative() {
            job.data = path.parent().unwrap_or(Path::new(".")).join(&job.data);
        }
        Ok(job)
    }
}

/// Everything needed to map raw CSV rows onto the model's inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub features: Vec<String>,
    pub target: String,
    pub normalization: Normalization,
    pub expand: bool,
}

/// Loads, normalizes and optionally expands the job's training data.
pub fn prepare(job: &Job) -> Result<(Dataset, Preprocess)> {
    let headers = read_headers(&job.data)?;
    let target = match &job.target {
        Some(name) => name.clone(),
        None => headers.last().cloned().context("csv has no columns")?,
    };
    let column = job.target.clone().map_or(TargetColumn::Last, TargetColumn::Named);
    let raw = load_csv(&job.data, &column).with_context(|| format!("loading {}", job.data.display()))?;
    let (mut train, normalization) = minmax_normalize(&raw);
    if job.expand {
        train = expand_interactions(&train)?;
    }
    let features = headers.into_iter().filter(|h| *h != target).collect();
    Ok((train, Preprocess { features, target, normalization, expand: job.expand }))
}

fn read_headers(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(reader.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

/// A raw CSV mapped through a [`Preprocess`]; targets are present when the
/// file has the target column.
pub struct Inputs {
    pub dataset: Dataset,
    pub targets: Option<Vec<f64>>,
}

pub fn load_inputs(path: &Path, prep: &Preprocess) -> Result<Inputs> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let columns = prep
        .features
        .iter()
        .map(|f| position(f).with_context(|| format!("{} has no column {f:?}", path.display())))
        .collect::<Result<Vec<_>>>()?;
    let target_col = position(&prep.target);

    let p = columns.len();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |j: usize| -> Result<f64> {
            let text = record.get(j).unwrap_or("").trim();
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => bail!("row {}, column {:?}: cannot parse {text:?}", k + 2, headers[j]),
            }
        };
        let start = features.len();
        for &j in &columns {
            features.push(cell(j)?);
        }
        prep.normalization.apply_row_in_place(&mut features[start..start + p]);
        if let Some(j) = target_col {
            targets.push(cell(j)?);
        }
    }
    if features.is_empty() {
        bail!("{} has no data rows", path.display());
    }
    let n = features.len() / p;
    let placeholder = if target_col.is_some() { targets.clone() } else { vec![0.0; n] };
    let mut dataset = Dataset::infer(features, p, placeholder)?;
    if prep.expand {
        dataset = expand_interactions(&dataset)?;
    }
    Ok(Inputs { dataset, targets: target_col.map(|_| targets) })
}

/// On-disk model: preprocessing, provenance and the fitted model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub preprocess: Preprocess,
    pub method: MethodSpec,
    pub seed: u64,
    pub model: Value,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<(Self, FittedModel)> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: ModelFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let model = FittedModel::from_json(file.model.clone())?;
        Ok((file, model))
    }
}
