//! Synthetic XOR data, scoring, feature expansion and the benchmark runner.
//!
//! A benchmark is a grid of methods x datasets x trials described by a JSON
//! [`BenchConfig`]. Every cell `(dataset, trial)` gets one seed shared by all
//! methods, so methods are compared on identical data, splits and search
//! streams. Results are written as one JSON line per trial plus a CSV
//! aggregate.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{load_csv, minmax_normalize, train_val_split, Dataset, FeatureMode, TargetColumn};
use crate::error::{Error, Result};
use crate::forests::{
    fit_breiman_tree, fit_forest_rc, fit_random_forest, fit_rf_plus_s, Forest, ForestRc, FrcParams, ProjectionLaw,
    RandomForest, Regressor, RfParams, RfPlusSModel,
};
use crate::progressive::{refine, ProgressiveConfig, ProgressiveResult};
use crate::rng;
use crate::splitspace::CandidatePool;
use crate::tree::{FitConfig, ObliqueTree};
use crate::tuning::{
    frc_params, frc_space, h_param, random_search_on, refit_pooled, rf_params, rf_plus_s_space, rf_space, Predictor,
    TuneReport, TRAIN_FRACTION,
};

fn default_test_size() -> usize {
    5000
}

/// Parity regression on uniform binary features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XorSpec {
    pub n: usize,
    pub p: usize,
    pub s0: usize,
    /// Standard deviation of the Gaussian noise added to training targets.
    pub sigma: f64,
    pub seed: u64,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
}

#[derive(Debug, Clone)]
pub struct XorData {
    pub train: Dataset,
    /// Noiseless targets.
    pub test: Dataset,
    /// The active coordinates, ascending.
    pub support: Vec<usize>,
}

/// `+1` when an odd number of the active coordinates are set, `-1` otherwise.
pub fn xor_target(x: &[f64], support: &[usize]) -> f64 {
    let ones = support.iter().filter(|&&j| x[j] == 1.0).count();
    if ones % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn gen_xor(spec: &XorSpec) -> Result<XorData> {
    if spec.s0 < 1 || spec.s0 > spec.p {
        return Err(Error::InvalidSparsity { s: spec.s0, p: spec.p });
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma {} must be finite and >= 0", spec.sigma)));
    }
    if spec.n == 0 || spec.test_size == 0 {
        return Err(Error::InvalidConfig("train and test sizes must be positive".into()));
    }
    let mut rng = rng::stream(spec.seed, 0);
    let mut support = index::sample(&mut rng, spec.p, spec.s0).into_vec();
    support.sort_unstable();

    let draw = |rows: usize, sigma: f64, rng: &mut rng::StreamRng| -> Result<Dataset> {
        let features: Vec<f64> = (0..rows * spec.p).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let targets = features
            .chunks_exact(spec.p)
            .map(|x| {
                let noise: f64 = if sigma > 0.0 { sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                xor_target(x, &support) + noise
            })
            .collect();
        Dataset::from_flat(features, spec.p, targets, FeatureMode::Binary)
    };
    let train = draw(spec.n, spec.sigma, &mut rng)?;
    let test = draw(spec.test_size, 0.0, &mut rng)?;
    Ok(XorData { train, test, support })
}

/// `1 - MSE / Var(targets)` with the population variance.
pub fn r2_score(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: targets.len(), found: predictions.len() });
    }
    if targets.len() < 2 {
        return Err(Error::InvalidDataset("R2 needs at least two targets".into()));
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let mse = predictions.iter().zip(targets).map(|(f, y)| (f - y).powi(2)).sum::<f64>() / n;
    Ok(1.0 - mse / var)
}

/// Min-max rescaled scores on one dataset: the best method gets 1, the worst 0.
pub fn rrs(dataset: &str, scores: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    if scores.len() < 2 {
        return Err(Error::InvalidConfig(format!("dataset {dataset:?} needs at least two methods to rank")));
    }
    let min = scores.values().copied().fold(f64::INFINITY, f64::min);
    let max = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(Error::DegenerateScores { dataset: dataset.to_string(), score: max });
    }
    Ok(scores.iter().map(|(m, s)| (m.clone(), (s - min) / (max - min))).collect())
}

/// Appends `x_i * x_j` for every `i <= j`, in lexicographic order.
pub fn expand_interactions(dataset: &Dataset) -> Result<Dataset> {
    let p = dataset.p();
    let width = p + p * (p + 1) / 2;
    let mut features = Vec::with_capacity(dataset.n() * width);
    for x in dataset.rows() {
        features.extend_from_slice(x);
        for i in 0..p {
            for j in i..p {
                features.push(x[i] * x[j]);
            }
        }
    }
    Dataset::from_flat(features, width, dataset.targets().to_vec(), dataset.mode())
}

fn d_sparsity() -> usize {
    5
}
fn d_subset() -> usize {
    100
}
fn d_depth() -> usize {
    3
}
fn d_minimum() -> usize {
    10
}
fn d_rounds() -> usize {
    30
}
fn d_tune_trees() -> usize {
    30
}
fn d_final_trees() -> usize {
    100
}
fn d_test_fraction() -> f64 {
    0.2
}

/// Progressive tree settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveMethod {
    pub iterations: usize,
    #[serde(default = "d_sparsity")]
    pub sparsity: usize,
    #[serde(default = "d_subset")]
    pub subset_size: usize,
    /// Finite pool size; absent means fresh directions every iteration.
    #[serde(default)]
    pub pool_size: Option<usize>,
    #[serde(default = "d_depth")]
    pub depth: usize,
    #[serde(default = "d_minimum")]
    pub min_samples_leaf: usize,
    #[serde(default = "d_minimum")]
    pub min_samples_split: usize,
    #[serde(default)]
    pub strict: bool,
}

impl ProgressiveMethod {
    /// Refinement config for a trial seed; the sparsity is capped at `p`.
    pub fn config(&self, p: usize, seed: u64) -> ProgressiveConfig {
        let sparsity = self.sparsity.min(p);
        let pool = match self.pool_size {
            Some(b) => CandidatePool::finite(b, rng::mix(&[seed, 4]), sparsity, self.subset_size),
            None => CandidatePool::infinite(sparsity, self.subset_size),
        };
        let fit = if self.strict {
            FitConfig::strict(self.depth)
        } else {
            FitConfig::constrained(self.depth, self.min_samples_leaf, self.min_samples_split)
        };
        ProgressiveConfig { pool, iterations: self.iterations, fit, seed: rng::mix(&[seed, 2]) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreimanMethod {
    /// Directions drawn at every node.
    pub directions: usize,
    #[serde(default = "d_sparsity")]
    pub sparsity: usize,
    #[serde(default = "d_depth")]
    pub depth: usize,
    #[serde(default = "d_minimum")]
    pub min_samples_leaf: usize,
    #[serde(default = "d_minimum")]
    pub min_samples_split: usize,
    #[serde(default)]
    pub projection: ProjectionLaw,
}

/// Random-search budget for the forest methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestTuning {
    #[serde(default = "d_rounds")]
    pub rounds: usize,
    #[serde(default = "d_tune_trees")]
    pub tune_trees: usize,
    #[serde(default = "d_final_trees")]
    pub final_trees: usize,
}

impl Default for ForestTuning {
    fn default() -> Self {
        Self { rounds: d_rounds(), tune_trees: d_tune_trees(), final_trees: d_final_trees() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Progressive(ProgressiveMethod),
    Breiman(BreimanMethod),
    RandomForest {
        #[serde(default)]
        tuning: ForestTuning,
    },
    RfPlusS {
        progressive: ProgressiveMethod,
        #[serde(default)]
        tuning: ForestTuning,
    },
    ForestRc {
        #[serde(default)]
        tuning: ForestTuning,
        /// Directions per node; defaults to `min(1000, p^2)`.
        #[serde(default)]
        max_features: Option<usize>,
        #[serde(default)]
        projection: ProjectionLaw,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub name: String,
    #[serde(flatten)]
    pub method: MethodSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Xor {
        n: usize,
        p: usize,
        s0: usize,
        sigma: f64,
        #[serde(default = "default_test_size")]
        test_size: usize,
    },
    Csv {
        path: PathBuf,
        /// Target column name; the last column when absent.
        #[serde(default)]
        target: Option<String>,
        #[serde(default = "d_test_fraction")]
        test_fraction: f64,
        /// Append pairwise products and squares after normalization.
        #[serde(default)]
        expand: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecEntry {
    pub name: String,
    #[serde(flatten)]
    pub data: DataSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    pub methods: Vec<MethodEntry>,
    pub specs: Vec<SpecEntry>,
    pub trials: usize,
    pub output_dir: PathBuf,
}

impl BenchConfig {
    /// Reads a config; relative CSV paths are resolved against the config's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut config: BenchConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for spec in &mut config.specs {
            if let DataSpec::Csv { path, .. } = &mut spec.data {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods declared".into()));
        }
        if self.specs.is_empty() {
            return Err(Error::InvalidConfig("no datasets declared".into()));
        }
        for (k, m) in self.methods.iter().enumerate() {
            if self.methods[..k].iter().any(|o| o.name == m.name) {
                return Err(Error::InvalidConfig(format!("method name {:?} is used twice", m.name)));
            }
        }
        for (k, s) in self.specs.iter().enumerate() {
            if self.specs[..k].iter().any(|o| o.name == s.name) {
                return Err(Error::InvalidConfig(format!("dataset name {:?} is used twice", s.name)));
            }
            if let DataSpec::Csv { test_fraction, .. } = s.data {
                if !(test_fraction > 0.0 && test_fraction < 1.0) {
                    return Err(Error::InvalidConfig(format!("test_fraction {test_fraction} outside (0, 1)")));
                }
            }
        }
        Ok(())
    }
}

/// Predictions and method-specific diagnostics for one fit.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub predictions: Vec<f64>,
    pub details: Value,
}

/// Errors unless every iteration kept at most `2^H - 1` distinct splits.
pub fn check_split_bound(result: &ProgressiveResult, depth: usize) -> Result<usize> {
    let bound = (1usize << depth.min(63)) - 1;
    let max = result.history.iter().map(|r| r.n_splits).max().unwrap_or(0);
    if max > bound {
        return Err(Error::Invariant(format!("{max} distinct splits exceed the depth-{depth} bound {bound}")));
    }
    Ok(max)
}

fn progressive_details(result: &ProgressiveResult, depth: usize) -> Result<Value> {
    let max_splits = check_split_bound(result, depth)?;
    Ok(serde_json::json!({
        "iterations": result.history.len(),
        "splits": result.split_set.len(),
        "max_splits": max_splits,
        "training_sse": result.history.last().map(|r| r.training_sse),
    }))
}

fn tuning_details(report: &TuneReport, extra: Value) -> Value {
    let mut details = serde_json::json!({
        "best_params": report.best_params,
        "best_val_score": report.best_val_score,
    });
    if let (Some(obj), Value::Object(more)) = (details.as_object_mut(), extra) {
        obj.extend(more);
    }
    details
}

/// A model produced by [`fit_method`].
#[derive(Debug, Clone)]
pub enum FittedModel {
    Tree(ObliqueTree),
    RandomForest(RandomForest),
    RfPlusS(RfPlusSModel),
    ForestRc(ForestRc),
}

impl FittedModel {
    /// Raw feature width expected at prediction time.
    pub fn width(&self) -> usize {
        match self {
            FittedModel::Tree(m) => m.width(),
            FittedModel::RandomForest(m) => m.width(),
            FittedModel::RfPlusS(m) => m.width(),
            FittedModel::ForestRc(m) => m.width(),
        }
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        match self {
            FittedModel::Tree(m) => m.predict_all(dataset),
            FittedModel::RandomForest(m) => m.predict_all(dataset),
            FittedModel::RfPlusS(m) => m.predict_all(dataset),
            FittedModel::ForestRc(m) => m.predict_all(dataset),
        }
    }

    /// JSON document tagged with `"kind"`.
    pub fn to_json(&self) -> Value {
        match self {
            FittedModel::Tree(m) => serde_json::json!({ "kind": "tree", "tree": m.to_json() }),
            FittedModel::RandomForest(m) => serde_json::json!({ "kind": "random_forest", "forest": m }),
            FittedModel::RfPlusS(m) => serde_json::json!({ "kind": "rf_plus_s", "model": m.to_json() }),
            FittedModel::ForestRc(m) => serde_json::json!({
                "kind": "forest_rc",
                "members": m.members.iter().map(ObliqueTree::to_json).collect::<Vec<_>>(),
            }),
        }
    }

    pub fn from_json(mut value: Value) -> Result<Self> {
        let mut take = |key: &str| -> Result<Value> {
            value
                .get_mut(key)
                .map(Value::take)
                .ok_or_else(|| Error::InvalidConfig(format!("model document has no {key:?} field")))
        };
        let kind = take("kind")?;
        match kind.as_str() {
            Some("tree") => Ok(FittedModel::Tree(ObliqueTree::from_json(take("tree")?)?)),
            Some("random_forest") => Ok(FittedModel::RandomForest(serde_json::from_value(take("forest")?)?)),
            Some("rf_plus_s") => Ok(FittedModel::RfPlusS(RfPlusSModel::from_json(take("model")?)?)),
            Some("forest_rc") => {
                let members: Vec<Value> = serde_json::from_value(take("members")?)?;
                let members = members.into_iter().map(ObliqueTree::from_json).collect::<Result<Vec<_>>>()?;
                if members.is_empty() || members.iter().any(|m| m.dim() != members[0].dim()) {
                    return Err(Error::InvalidConfig("forest members must be non-empty and share a width".into()));
                }
                Ok(FittedModel::ForestRc(Forest { members }))
            }
            _ => Err(Error::InvalidConfig(format!("unknown model kind {kind}"))),
        }
    }
}

/// A fitted model with its diagnostics and, for tuned methods, the search report.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: FittedModel,
    pub details: Value,
    pub tuning: Option<TuneReport>,
}

/// Fits `method` on `train`.
///
/// Streams derived from `seed`: 1 for the tuning split, `mix(seed, 2)` for
/// refinement, `mix(seed, 3)` for the search, 5 for Breiman trees.
pub fn fit_method(method: &MethodSpec, train: &Dataset, seed: u64) -> Result<FitOutcome> {
    let p = train.p();
    let tuning_split = || -> Result<(Dataset, Dataset)> {
        let plan = train_val_split(train.n(), TRAIN_FRACTION, &mut rng::stream(seed, 1))?;
        Ok((plan.train(train), plan.val(train)))
    };
    let search_seed = rng::mix(&[seed, 3]);
    match method {
        MethodSpec::Progressive(m) => {
            let result = refine(train, &m.config(p, seed))?;
            let details = progressive_details(&result, m.depth)?;
            Ok(FitOutcome { model: FittedModel::Tree(result.final_tree), details, tuning: None })
        }
        MethodSpec::Breiman(m) => {
            let config = FitConfig::constrained(m.depth, m.min_samples_leaf, m.min_samples_split);
            let tree = fit_breiman_tree(train, m.directions, m.sparsity.min(p), m.projection, &config, &mut rng::stream(seed, 5))?;
            let details = serde_json::json!({"leaves": tree.n_leaves()});
            Ok(FitOutcome { model: FittedModel::Tree(tree), details, tuning: None })
        }
        MethodSpec::RandomForest { tuning } => {
            let (fit_part, val_part) = tuning_split()?;
            let build = |trees: usize| {
                move |d: &Dataset, params: &crate::tuning::Params, s: u64| {
                    let params = rf_params(&RfParams { n_estimators: trees, ..RfParams::default() }, params)?;
                    fit_random_forest(d, &params, &mut rng::stream(s, 0))
                }
            };
            let report = random_search_on(&fit_part, &val_part, &rf_space(), tuning.rounds, search_seed, build(tuning.tune_trees))?;
            let model = refit_pooled(train, &report, build(tuning.final_trees))?;
            let details = tuning_details(&report, Value::Null);
            Ok(FitOutcome { model: FittedModel::RandomForest(model), details, tuning: Some(report) })
        }
        MethodSpec::RfPlusS { progressive, tuning } => {
            let (fit_part, val_part) = tuning_split()?;
            let result = refine(&fit_part, &progressive.config(p, seed))?;
            let refine_details = progressive_details(&result, progressive.depth)?;
            let splits = result.split_set;
            let build = |trees: usize| {
                let splits = &splits;
                move |d: &Dataset, params: &crate::tuning::Params, s: u64| {
                    let rf = rf_params(&RfParams { n_estimators: trees, ..RfParams::default() }, params)?;
                    fit_rf_plus_s(d, splits, h_param(params)?, &rf, &mut rng::stream(s, 0))
                }
            };
            let space = rf_plus_s_space(progressive.depth);
            let report = random_search_on(&fit_part, &val_part, &space, tuning.rounds, search_seed, build(tuning.tune_trees))?;
            let model = refit_pooled(train, &report, build(tuning.final_trees))?;
            let details = tuning_details(&report, serde_json::json!({ "refinement": refine_details }));
            Ok(FitOutcome { model: FittedModel::RfPlusS(model), details, tuning: Some(report) })
        }
        MethodSpec::ForestRc { tuning, max_features, projection } => {
            let (fit_part, val_part) = tuning_split()?;
            let directions = max_features.unwrap_or_else(|| 1000.min(p.saturating_mul(p)));
            let build = |trees: usize| {
                move |d: &Dataset, params: &crate::tuning::Params, s: u64| {
                    let base = FrcParams {
                        forest: RfParams { n_estimators: trees, ..RfParams::default() },
                        feature_combinations: 1,
                        max_features: directions,
                        projection: *projection,
                    };
                    fit_forest_rc(d, &frc_params(&base, params, p)?, &mut rng::stream(s, 0))
                }
            };
            let report = random_search_on(&fit_part, &val_part, &frc_space(), tuning.rounds, search_seed, build(tuning.tune_trees))?;
            let model = refit_pooled(train, &report, build(tuning.final_trees))?;
            let details = tuning_details(&report, serde_json::json!({ "max_features": directions }));
            Ok(FitOutcome { model: FittedModel::ForestRc(model), details, tuning: Some(report) })
        }
    }
}

/// Fits `method` on `train` and predicts `test`; see [`fit_method`] for the seed streams.
pub fn run_method(method: &MethodSpec, train: &Dataset, test: &Dataset, seed: u64) -> Result<MethodOutcome> {
    let fit = fit_method(method, train, seed)?;
    Ok(MethodOutcome { predictions: fit.model.predict_dataset(test)?, details: fit.details })
}

/// Train/test pair for one trial of a dataset spec.
pub fn trial_data(spec: &DataSpec, loaded: Option<&Dataset>, seed: u64) -> Result<(Dataset, Dataset)> {
    match spec {
        DataSpec::Xor { n, p, s0, sigma, test_size } => {
            let data = gen_xor(&XorSpec { n: *n, p: *p, s0: *s0, sigma: *sigma, seed, test_size: *test_size })?;
            Ok((data.train, data.test))
        }
        DataSpec::Csv { test_fraction, expand, .. } => {
            let raw = loaded.ok_or_else(|| Error::InvalidConfig("csv dataset was not loaded".into()))?;
            let plan = train_val_split(raw.n(), 1.0 - test_fraction, &mut rng::stream(seed, 0))?;
            let (train, scaling) = minmax_normalize(&plan.train(raw));
            let test = scaling.apply(&plan.val(raw))?;
            if *expand {
                Ok((expand_interactions(&train)?, expand_interactions(&test)?))
            } else {
                Ok((train, test))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: String,
    pub spec: String,
    pub trial: usize,
    pub seed: u64,
    pub r2: Option<f64>,
    pub runtime_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub details: Value,
    pub method_config: Value,
    pub spec_config: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub spec: String,
    pub trials: usize,
    pub succeeded: usize,
    pub mean_r2: f64,
    pub sd_r2: f64,
    pub mean_runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrsRow {
    pub spec: String,
    pub method: String,
    pub rrs: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<AggregateRow>,
    /// Per-dataset relative scores; empty with fewer than two methods.
    pub rrs: Vec<RrsRow>,
    /// Datasets skipped in the relative scores because every method tied.
    pub degenerate: Vec<String>,
}

/// Seed shared by every method on one `(dataset, trial)` cell.
pub fn cell_seed(master: u64, spec_index: usize, trial: usize) -> u64 {
    rng::mix(&[master, spec_index as u64, trial as u64])
}

/// Runs the whole grid. Method failures are recorded per trial.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let loaded: Vec<Option<Dataset>> = config
        .specs
        .iter()
        .map(|s| match &s.data {
            DataSpec::Csv { path, target, .. } => {
                let target = target.clone().map_or(TargetColumn::Last, TargetColumn::Named);
                load_csv(path, &target).map(Some)
            }
            DataSpec::Xor { .. } => Ok(None),
        })
        .collect::<Result<_>>()?;

    let mut tasks = Vec::new();
    for s in 0..config.specs.len() {
        for t in 0..config.trials {
            for m in 0..config.methods.len() {
                tasks.push((s, t, m));
            }
        }
    }
    let records: Vec<TrialRecord> = tasks
        .par_iter()
        .map(|&(s, t, m)| {
            let spec = &config.specs[s];
            let method = &config.methods[m];
            let seed = cell_seed(config.seed, s, t);
            let start = Instant::now();
            let outcome = trial_data(&spec.data, loaded[s].as_ref(), seed).and_then(|(train, test)| {
                let out = run_method(&method.method, &train, &test, seed)?;
                Ok((r2_score(&out.predictions, test.targets())?, out.details))
            });
            let runtime_seconds = start.elapsed().as_secs_f64();
            let (r2, error, details) = match outcome {
                Ok((r2, details)) => (Some(r2), None, details),
                Err(e) => (None, Some(e.to_string()), Value::Null),
            };
            TrialRecord {
                method: method.name.clone(),
                spec: spec.name.clone(),
                trial: t,
                seed,
                r2,
                runtime_seconds,
                error,
                details,
                method_config: serde_json::to_value(&method.method).unwrap_or(Value::Null),
                spec_config: serde_json::to_value(&spec.data).unwrap_or(Value::Null),
            }
        })
        .collect();

    let aggregates = aggregate(config, &records);
    let (rrs, degenerate) = relative_scores(config, &aggregates);
    Ok(BenchReport { records, aggregates, rrs, degenerate })
}

/// Mean, sample standard deviation and mean runtime per `(method, dataset)`.
pub fn aggregate(config: &BenchConfig, records: &[TrialRecord]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for spec in &config.specs {
        for method in &config.methods {
            let cell: Vec<&TrialRecord> =
                records.iter().filter(|r| r.spec == spec.name && r.method == method.name).collect();
            let scores: Vec<f64> = cell.iter().filter_map(|r| r.r2).collect();
            let k = scores.len() as f64;
            let mean = if scores.is_empty() { f64::NAN } else { scores.iter().sum::<f64>() / k };
            let sd = if scores.len() < 2 {
                0.0
            } else {
                (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            };
            let runtime = cell.iter().map(|r| r.runtime_seconds).sum::<f64>() / cell.len().max(1) as f64;
            rows.push(AggregateRow {
                method: method.name.clone(),
                spec: spec.name.clone(),
                trials: cell.len(),
                succeeded: scores.len(),
                mean_r2: mean,
                sd_r2: sd,
                mean_runtime_seconds: runtime,
            });
        }
    }
    rows
}

fn relative_scores(config: &BenchConfig, aggregates: &[AggregateRow]) -> (Vec<RrsRow>, Vec<String>) {
    let mut rows = Vec::new();
    let mut degenerate = Vec::new();
    if config.methods.len() < 2 {
        return (rows, degenerate);
    }
    for spec in &config.specs {
        let scores: BTreeMap<String, f64> = aggregates
            .iter()
            .filter(|a| a.spec == spec.name && a.mean_r2.is_finite())
            .map(|a| (a.method.clone(), a.mean_r2))
            .collect();
        match rrs(&spec.name, &scores) {
            Ok(map) => {
                // Keep the declared method order.
                for m in &config.methods {
                    if let Some(v) = map.get(&m.name) {
                        rows.push(RrsRow { spec: spec.name.clone(), method: m.name.clone(), rrs: *v });
                    }
                }
            }
            Err(_) => degenerate.push(spec.name.clone()),
        }
    }
    (rows, degenerate)
}

/// Writes `trials.jsonl`, `aggregate.csv` and, with two or more methods, `rrs.csv`.
pub fn write_report(report: &BenchReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let io = |source| Error::Io { path: dir.to_path_buf(), source };
    fs::create_dir_all(dir).map_err(io)?;

    let mut jsonl = Vec::new();
    for r in &report.records {
        serde_json::to_writer(&mut jsonl, r)?;
        jsonl.push(b'\n');
    }
    fs::write(dir.join("trials.jsonl"), jsonl).map_err(io)?;

    let mut agg = csv::Writer::from_path(dir.join("aggregate.csv"))?;
    for row in &report.aggregates {
        agg.serialize(row)?;
    }
    agg.flush().map_err(io)?;

    if !report.rrs.is_empty() {
        let mut out = csv::Writer::from_path(dir.join("rrs.csv"))?;
        for row in &report.rrs {
            out.serialize(row)?;
        }
        out.flush().map_err(io)?;
    }
    if !report.degenerate.is_empty() {
        let mut f = fs::File::create(dir.join("rrs_skipped.txt")).map_err(io)?;
        for name in &report.degenerate {
            writeln!(f, "{name}").map_err(io)?;
        }
    }
    Ok(())
}

/// Mean relative score per method across datasets, in declared order.
pub fn mean_rrs(report: &BenchReport) -> Vec<(String, f64)> {
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for row in &report.rrs {
        if !order.contains(&row.method) {
            order.push(row.method.clone());
        }
        let e = sums.entry(row.method.clone()).or_insert((0.0, 0));
        e.0 += row.rrs;
        e.1 += 1;
    }
    order.into_iter().map(|m| {
        let (s, k) = sums[&m];
        (m, s / k as f64)
    }).collect()
}
