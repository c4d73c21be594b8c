//! Forest baselines and the split-augmented forest.
//!
//! * [`fit_random_forest`]: bagged axis-aligned CART trees with per-node
//!   column subsampling.
//! * [`fit_breiman_tree`] / [`fit_forest_rc`]: oblique trees whose candidate
//!   directions are redrawn at every node, alone or bagged.
//! * [`fit_rf_plus_s`]: a random forest on the raw features plus the
//!   projections `w_k . x` of a learned split set.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMode};
use crate::error::{Error, Result};
use crate::rng;
use crate::splitspace::{sample_weight_vector_with, CandidateSet, ObliqueSplit, SplitRecord, ValueLaw, ValueLawKind, WeightVector};
use crate::tree::{fit_tree_with, FitConfig, ObliqueTree};

/// Anything that maps a feature row to a prediction.
pub trait Regressor {
    fn predict_row(&self, x: &[f64]) -> f64;
    /// Expected row width.
    fn width(&self) -> usize;
}

impl Regressor for ObliqueTree {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.predict(x).expect("row width checked by the caller")
    }

    fn width(&self) -> usize {
        self.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_estimators: usize,
    /// Fraction of features considered at each node.
    pub gamma: f64,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub min_impurity_decrease: f64,
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            gamma: 1.0,
            min_samples_split: 2,
            min_samples_leaf: 1,
            min_impurity_decrease: 0.0,
            max_depth: None,
            bootstrap: true,
        }
    }
}

impl RfParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators < 1 {
            return Err(Error::InvalidConfig("n_estimators must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.min_impurity_decrease >= 0.0 && self.min_impurity_decrease.is_finite()) {
            return Err(Error::InvalidConfig("min_impurity_decrease must be finite and >= 0".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidConfig("max_depth must be at least 1".into()));
        }
        Ok(())
    }

    /// Features examined per node for a dataset of the given width.
    pub fn features_per_node(&self, width: usize) -> usize {
        ((self.gamma * width as f64).ceil() as usize).clamp(1, width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrcParams {
    #[serde(flatten)]
    pub forest: RfParams,
    /// Sparsity of the per-node random directions.
    pub feature_combinations: usize,
    /// Directions drawn per node.
    pub max_features: usize,
    #[serde(default)]
    pub projection: ProjectionLaw,
}

impl FrcParams {
    pub fn validate(&self, p: usize) -> Result<()> {
        self.forest.validate()?;
        if self.feature_combinations < 1 {
            return Err(Error::InvalidConfig("feature_combinations must be at least 1".into()));
        }
        if self.max_features < 1 {
            return Err(Error::InvalidConfig("max_features must be at least 1".into()));
        }
        if p == 0 {
            return Err(Error::InvalidConfig("dataset has no features".into()));
        }
        Ok(())
    }

    /// Tree settings every member is grown with on `n` rows.
    pub fn fit_config(&self, n: usize) -> FitConfig {
        FitConfig {
            depth: self.forest.max_depth.unwrap_or(n).clamp(1, n.max(1)),
            min_samples_leaf: self.forest.min_samples_leaf,
            min_samples_split: self.forest.min_samples_split,
            strict_mode: false,
            tie_epsilon: 1e-12,
            min_impurity_decrease: self.forest.min_impurity_decrease,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisNode {
    /// `(feature, threshold)`; rows with `x[feature] > threshold` go right.
    pub split: Option<(usize, f64)>,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

/// Axis-aligned CART regression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisTree {
    pub nodes: Vec<AxisNode>,
    pub width: usize,
}

impl Regressor for AxisTree {
    fn predict_row(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        while let Some((f, t)) = self.nodes[id].split {
            id = if x[f] > t { self.nodes[id].right } else { self.nodes[id].left };
        }
        self.nodes[id].value
    }

    fn width(&self) -> usize {
        self.width
    }
}

struct AxisCandidate {
    feature: usize,
    threshold: f64,
    proxy: f64,
}

/// Best `(feature, midpoint)` over `features` by SSE reduction; first found wins ties.
fn best_axis_split(
    dataset: &Dataset,
    rows: &[usize],
    resid: &[f64],
    features: &[usize],
    min_leaf: usize,
) -> Option<AxisCandidate> {
    let m = rows.len();
    let total: f64 = resid.iter().sum();
    let mut best: Option<AxisCandidate> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
    for &f in features {
        pairs.clear();
        pairs.extend(rows.iter().zip(resid).map(|(&i, &r)| (dataset.value(i, f), r)));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = 0.0;
        for k in 0..m - 1 {
            cum += pairs[k].1;
            let n_l = k + 1;
            if pairs[k].0 == pairs[k + 1].0 || n_l < min_leaf || m - n_l < min_leaf {
                continue;
            }
            let right = total - cum;
            let proxy = cum * cum / n_l as f64 + right * right / (m - n_l) as f64;
            if best.as_ref().is_none_or(|b| proxy > b.proxy) {
                let mut threshold = 0.5 * (pairs[k].0 + pairs[k + 1].0);
                if threshold >= pairs[k + 1].0 {
                    threshold = pairs[k].0;
                }
                best = Some(AxisCandidate { feature: f, threshold, proxy });
            }
        }
    }
    best
}

fn fit_axis_tree<R: Rng + ?Sized>(dataset: &Dataset, rows: Vec<usize>, params: &RfParams, rng: &mut R) -> AxisTree {
    let width = dataset.p();
    let k = params.features_per_node(width);
    let min_split = params.min_samples_split.max(2);
    let min_leaf = params.min_samples_leaf.max(1);
    let max_depth = params.max_depth.unwrap_or(usize::MAX);
    let n_total = rows.len() as f64;

    let mean = |rows: &[usize]| rows.iter().map(|&i| dataset.target(i)).sum::<f64>() / rows.len() as f64;
    let mut nodes = vec![AxisNode { split: None, left: 0, right: 0, value: mean(&rows) }];
    let mut stack = vec![(0usize, rows, 0usize)];
    while let Some((id, rows, depth)) = stack.pop() {
        if depth >= max_depth || rows.len() < min_split || rows.len() < 2 * min_leaf {
            continue;
        }
        let mu = nodes[id].value;
        let resid: Vec<f64> = rows.iter().map(|&i| dataset.target(i) - mu).collect();
        let sse: f64 = resid.iter().map(|r| r * r).sum();
        if sse <= f64::EPSILON * mu.abs().max(1.0) * rows.len() as f64 {
            continue;
        }
        let features = index::sample(rng, width, k).into_vec();
        let Some(best) = best_axis_split(dataset, &rows, &resid, &features, min_leaf) else {
            continue;
        };
        let total: f64 = resid.iter().sum();
        let decrease = best.proxy - total * total / rows.len() as f64;
        if decrease / n_total < params.min_impurity_decrease {
            continue;
        }
        let (right, left): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| dataset.value(i, best.feature) > best.threshold);
        let l = nodes.len();
        nodes.push(AxisNode { split: None, left: 0, right: 0, value: mean(&left) });
        nodes.push(AxisNode { split: None, left: 0, right: 0, value: mean(&right) });
        nodes[id].split = Some((best.feature, best.threshold));
        nodes[id].left = l;
        nodes[id].right = l + 1;
        stack.push((l + 1, right, depth + 1));
        stack.push((l, left, depth + 1));
    }
    AxisTree { nodes, width }
}

fn bootstrap_rows<R: Rng + ?Sized>(n: usize, bootstrap: bool, rng: &mut R) -> Vec<usize> {
    if bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    }
}

/// Bagged ensemble; predictions are the mean over members in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest<T> {
    pub members: Vec<T>,
}

impl<T: Regressor> Forest<T> {
    pub fn width(&self) -> usize {
        self.members.first().map_or(0, Regressor::width)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.width() {
            return Err(Error::DimensionMismatch { expected: self.width(), found: x.len() });
        }
        Ok(self.predict_row(x))
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        if dataset.p() != self.width() {
            return Err(Error::DimensionMismatch { expected: self.width(), found: dataset.p() });
        }
        Ok(dataset.rows().map(|x| self.predict_row(x)).collect())
    }
}

impl<T: Regressor> Regressor for Forest<T> {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.members.iter().map(|m| m.predict_row(x)).sum::<f64>() / self.members.len() as f64
    }

    fn width(&self) -> usize {
        Forest::width(self)
    }
}

pub type RandomForest = Forest<AxisTree>;

/// One master seed per member, drawn up front so members can be fitted in any order.
fn member_seeds<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<u64> {
    (0..count).map(|_| rng::child_seed(rng)).collect()
}

pub fn fit_random_forest<R: Rng + ?Sized>(dataset: &Dataset, params: &RfParams, rng: &mut R) -> Result<RandomForest> {
    params.validate()?;
    let seeds = member_seeds(params.n_estimators, rng);
    let members = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = rng::stream(seed, 0);
            let rows = bootstrap_rows(dataset.n(), params.bootstrap, &mut rng);
            fit_axis_tree(dataset, rows, params, &mut rng)
        })
        .collect();
    Ok(Forest { members })
}

/// How a Breiman node draws its directions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionLaw {
    /// Independent draws with `k ~ U{1..s}` nonzeros and uniform values.
    #[default]
    Uniform,
    /// Independent draws with `k ~ U{1..s}` nonzeros and values `+-1`.
    Signs,
    /// `directions * s` signed unit entries, each placed on a uniformly chosen
    /// direction and feature; repeated entries add up. A direction then has
    /// `s` nonzeros on average, and directions left empty are skipped.
    Scattered,
}

fn scattered_directions<R: Rng + ?Sized>(p: usize, directions: usize, sparsity: usize, rng: &mut R) -> Result<Vec<WeightVector>> {
    let mut entries: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); directions];
    for _ in 0..directions.saturating_mul(sparsity) {
        let k = rng.random_range(0..directions);
        let j = rng.random_range(0..p);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        *entries[k].entry(j).or_insert(0.0) += sign;
    }
    entries
        .into_iter()
        .filter_map(|m| {
            let (idx, val): (Vec<usize>, Vec<f64>) = m.into_iter().filter(|&(_, v)| v != 0.0).unzip();
            (!idx.is_empty()).then(|| WeightVector::normalized(p, idx, val))
        })
        .collect()
}

/// Oblique tree that draws `directions` fresh sparse directions at every node,
/// with thresholds at the node's own projections.
pub fn fit_breiman_tree<R: Rng + ?Sized>(
    dataset: &Dataset,
    directions: usize,
    sparsity: usize,
    law: ProjectionLaw,
    config: &FitConfig,
    rng: &mut R,
) -> Result<ObliqueTree> {
    let seed = rng::child_seed(rng);
    fit_breiman_on(dataset, (0..dataset.n()).collect(), directions, sparsity, law, config, seed)
}

/// Candidate set a Breiman tree node with id `node_id` draws under `seed`.
pub fn breiman_node_candidates(
    dataset: &Dataset,
    rows: &[usize],
    directions: usize,
    sparsity: usize,
    law: ProjectionLaw,
    seed: u64,
    node_id: usize,
) -> Result<CandidateSet> {
    let mut node_rng = rng::stream(seed, node_id as u64);
    let mut set = CandidateSet::new();
    let values: &dyn ValueLaw = match law {
        ProjectionLaw::Uniform => &ValueLawKind::Uniform,
        ProjectionLaw::Signs => &ValueLawKind::Signs,
        ProjectionLaw::Scattered => {
            for w in scattered_directions(dataset.p(), directions, sparsity, &mut node_rng)? {
                set.insert_lambda_on(&w, dataset, rows);
            }
            return Ok(set);
        }
    };
    for _ in 0..directions {
        let w = sample_weight_vector_with(dataset.p(), sparsity, values, &mut node_rng)?;
        set.insert_lambda_on(&w, dataset, rows);
    }
    Ok(set)
}

fn fit_breiman_on(
    dataset: &Dataset,
    rows: Vec<usize>,
    directions: usize,
    sparsity: usize,
    law: ProjectionLaw,
    config: &FitConfig,
    seed: u64,
) -> Result<ObliqueTree> {
    if directions < 1 {
        return Err(Error::InvalidConfig("at least one direction per node is required".into()));
    }
    if sparsity < 1 || sparsity > dataset.p() {
        return Err(Error::InvalidSparsity { s: sparsity, p: dataset.p() });
    }
    // A bootstrap resample is materialized as its own dataset so duplicate
    // rows weigh in the split losses.
    let sample = if rows.len() == dataset.n() && rows.iter().enumerate().all(|(k, &i)| k == i) {
        Cow::Borrowed(dataset)
    } else {
        Cow::Owned(dataset.select(&rows))
    };
    let mut tie_rng = rng::stream(seed, u64::MAX);
    let mut failure = None;
    let tree = fit_tree_with(&sample, config, &mut tie_rng, |ctx, _| {
        match breiman_node_candidates(&sample, ctx.rows, directions, sparsity, law, seed, ctx.node_id) {
            Ok(set) => Cow::Owned(set),
            Err(e) => {
                failure = Some(e);
                Cow::Owned(CandidateSet::new())
            }
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(tree),
    }
}

pub type ForestRc = Forest<ObliqueTree>;

pub fn fit_forest_rc<R: Rng + ?Sized>(dataset: &Dataset, params: &FrcParams, rng: &mut R) -> Result<ForestRc> {
    params.validate(dataset.p())?;
    let sparsity = params.feature_combinations.min(dataset.p());
    let config = params.fit_config(dataset.n());
    let seeds = member_seeds(params.forest.n_estimators, rng);
    let members = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = rng::stream(seed, 0);
            let rows = bootstrap_rows(dataset.n(), params.forest.bootstrap, &mut rng);
            fit_breiman_on(dataset, rows, params.max_features, sparsity, params.projection, &config, rng::child_seed(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest { members })
}

/// Appends `w_k . x` for the first `min(2^h - 1, |splits|)` splits. The new
/// columns keep their natural scale; `h = 0` returns the dataset unchanged.
pub fn augment_features(dataset: &Dataset, splits: &[ObliqueSplit], h: usize) -> Result<Dataset> {
    let extra = augmented_count(splits.len(), h);
    if extra == 0 {
        return Ok(dataset.clone());
    }
    let used = &splits[..extra];
    if let Some(s) = used.iter().find(|s| s.weight.dim() != dataset.p()) {
        return Err(Error::DimensionMismatch { expected: dataset.p(), found: s.weight.dim() });
    }
    let width = dataset.p() + extra;
    let mut features = Vec::with_capacity(dataset.n() * width);
    for x in dataset.rows() {
        features.extend_from_slice(x);
        features.extend(used.iter().map(|s| s.weight.dot(x)));
    }
    Dataset::from_flat(features, width, dataset.targets().to_vec(), FeatureMode::Raw)
}

fn augmented_count(available: usize, h: usize) -> usize {
    let cap = if h >= usize::BITS as usize { usize::MAX } else { (1usize << h) - 1 };
    cap.min(available)
}

/// A random forest over raw features plus split projections.
#[derive(Debug, Clone, PartialEq)]
pub struct RfPlusSModel {
    /// Only the first `min(2^h - 1, len)` splits are used.
    pub split_set: Vec<ObliqueSplit>,
    pub h: usize,
    pub forest: RandomForest,
    /// Raw feature width.
    pub p: usize,
}

pub fn fit_rf_plus_s<R: Rng + ?Sized>(
    dataset: &Dataset,
    split_set: &[ObliqueSplit],
    h: usize,
    params: &RfParams,
    rng: &mut R,
) -> Result<RfPlusSModel> {
    let augmented = augment_features(dataset, split_set, h)?;
    let used = augmented_count(split_set.len(), h);
    let forest = fit_random_forest(&augmented, params, rng)?;
    Ok(RfPlusSModel { split_set: split_set[..used].to_vec(), h, forest, p: dataset.p() })
}

impl RfPlusSModel {
    fn augmented_row(&self, x: &[f64]) -> Vec<f64> {
        let mut row = x.to_vec();
        row.extend(self.split_set.iter().map(|s| s.weight.dot(x)));
        row
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch { expected: self.p, found: x.len() });
        }
        Ok(self.predict_row(x))
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        if dataset.p() != self.p {
            return Err(Error::DimensionMismatch { expected: self.p, found: dataset.p() });
        }
        Ok(dataset.rows().map(|x| self.predict_row(x)).collect())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "p": self.p,
            "h": self.h,
            "split_set": self.split_set.iter().map(ObliqueSplit::record).collect::<Vec<_>>(),
            "forest": self.forest,
        })
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            p: usize,
            h: usize,
            split_set: Vec<SplitRecord>,
            forest: RandomForest,
        }
        let doc: Doc = serde_json::from_value(value)?;
        let split_set = doc.split_set.into_iter().map(|s| s.into_split(doc.p)).collect::<Result<Vec<_>>>()?;
        if doc.forest.width() != doc.p + split_set.len() {
            return Err(Error::DimensionMismatch { expected: doc.p + split_set.len(), found: doc.forest.width() });
        }
        Ok(Self { split_set, h: doc.h, forest: doc.forest, p: doc.p })
    }
}

impl Regressor for RfPlusSModel {
    fn predict_row(&self, x: &[f64]) -> f64 {
        if self.split_set.is_empty() {
            self.forest.predict_row(x)
        } else {
            self.forest.predict_row(&self.augmented_row(x))
        }
    }

    fn width(&self) -> usize {
        self.p
    }
}
