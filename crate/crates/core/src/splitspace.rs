//! Sparse oblique split space.
//!
//! A [`WeightVector`] is a unit-L2 direction with at most `s` nonzero
//! coordinates. Pairing it with every distinct sample projection gives the
//! candidate set of one direction ([`lambda_set`]); a [`CandidatePool`] draws
//! the per-iteration union of such sets used by the progressive refiner.
//!
//! Sampling follows a fixed recipe: the support size `k` is uniform on
//! `1..=s`, the support itself is a uniform `k`-subset of the features, and
//! the nonzero values come from a [`ValueLaw`] (by default `Uniform(-1, 1)`
//! without zero) before normalization. Only the support-size law is
//! essential; the value law is a convention and can be swapped.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

const NORM_TOLERANCE: f64 = 1e-12;

/// Sparse unit-length direction in `R^p`.
#[derive(Debug, Clone)]
pub struct WeightVector {
    p: usize,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl WeightVector {
    /// Validates sortedness, bounds, nonzero entries and unit norm.
    pub fn new(p: usize, idx: Vec<usize>, val: Vec<f64>) -> Result<Self> {
        if idx.len() != val.len() {
            return Err(Error::InvalidWeight(format!("{} indices but {} values", idx.len(), val.len())));
        }
        if idx.is_empty() {
            return Err(Error::InvalidWeight("no nonzero coordinates".into()));
        }
        if idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidWeight("indices not strictly increasing".into()));
        }
        if let Some(&j) = idx.iter().find(|&&j| j >= p) {
            return Err(Error::InvalidWeight(format!("index {j} out of range for p = {p}")));
        }
        if val.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::InvalidWeight("zero or non-finite coordinate".into()));
        }
        let norm = val.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidWeight(format!("L2 norm {norm} is not 1")));
        }
        Ok(Self { p, idx, val })
    }

    /// Scales arbitrary nonzero coordinates to unit length. Zero entries are dropped.
    pub fn normalized(p: usize, idx: Vec<usize>, val: Vec<f64>) -> Result<Self> {
        let (idx, val): (Vec<usize>, Vec<f64>) = idx.into_iter().zip(val).filter(|(_, v)| *v != 0.0).unzip();
        let norm = val.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidWeight("cannot normalize a zero vector".into()));
        }
        Self::new(p, idx, val.into_iter().map(|v| v / norm).collect())
    }

    /// The `j`-th standard basis vector.
    pub fn basis(p: usize, j: usize) -> Result<Self> {
        Self::new(p, vec![j], vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn indices(&self) -> &[usize] {
        &self.idx
    }

    pub fn values(&self) -> &[f64] {
        &self.val
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.p];
        for (&j, &v) in self.idx.iter().zip(&self.val) {
            dense[j] = v;
        }
        dense
    }

    /// Sparse dot product without the length check.
    #[inline]
    pub fn dot(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (&j, &v) in self.idx.iter().zip(&self.val) {
            acc += v * x[j];
        }
        acc
    }
}

// Identity is bitwise on the coordinates, so splits coming from one shared
// pool compare equal exactly when they are the same draw.
impl PartialEq for WeightVector {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p
            && self.idx == other.idx
            && self.val.len() == other.val.len()
            && self.val.iter().zip(&other.val).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for WeightVector {}

impl Hash for WeightVector {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.p.hash(state);
        self.idx.hash(state);
        for v in &self.val {
            v.to_bits().hash(state);
        }
    }
}

/// Dot product of `weight` with a feature row.
pub fn project(weight: &WeightVector, x: &[f64]) -> Result<f64> {
    if x.len() != weight.p {
        return Err(Error::DimensionMismatch { expected: weight.p, found: x.len() });
    }
    Ok(weight.dot(x))
}

/// The pair `(w, c)`: rows with `w . x > c` go right, the rest go left.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliqueSplit {
    pub weight: WeightVector,
    pub bias: f64,
}

impl ObliqueSplit {
    pub fn new(weight: WeightVector, bias: f64) -> Result<Self> {
        if !bias.is_finite() {
            return Err(Error::InvalidWeight(format!("bias {bias} is not finite")));
        }
        Ok(Self { weight, bias })
    }

    #[inline]
    pub fn goes_right(&self, x: &[f64]) -> bool {
        self.weight.dot(x) > self.bias
    }

    /// Bitwise identity on `(w, c)`.
    pub fn same_as(&self, other: &ObliqueSplit) -> bool {
        self.bias.to_bits() == other.bias.to_bits() && self.weight == other.weight
    }

    pub fn record(&self) -> SplitRecord {
        SplitRecord { idx: self.weight.idx.clone(), val: self.weight.val.clone(), bias: self.bias }
    }
}

/// Wire form of a split: `{"idx": [...], "val": [...], "bias": c}`. The
/// feature dimension comes from the enclosing document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
    pub bias: f64,
}

impl SplitRecord {
    pub fn into_split(self, p: usize) -> Result<ObliqueSplit> {
        ObliqueSplit::new(WeightVector::new(p, self.idx, self.val)?, self.bias)
    }
}

/// Wire form of a bare weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl From<&WeightVector> for WeightRecord {
    fn from(w: &WeightVector) -> Self {
        Self { idx: w.idx.clone(), val: w.val.clone() }
    }
}

impl WeightRecord {
    pub fn into_weight(self, p: usize) -> Result<WeightVector> {
        WeightVector::new(p, self.idx, self.val)
    }
}

/// Distribution of the nonzero magnitudes before normalization.
pub trait ValueLaw: Send + Sync {
    /// Returns a nonzero finite value.
    fn draw(&self, rng: &mut dyn RngCore) -> f64;
}

/// `Uniform(-1, 1)` with exact zeros rejected.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformSigned;

impl ValueLaw for UniformSigned {
    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v != 0.0 {
                return v;
            }
        }
    }
}

/// Equal-magnitude entries with random signs.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomSigns;

impl ValueLaw for RandomSigns {
    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        if rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }
}

/// Serializable choice among the built-in value laws.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueLawKind {
    #[default]
    Uniform,
    Signs,
}

impl ValueLaw for ValueLawKind {
    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        match self {
            ValueLawKind::Uniform => UniformSigned.draw(rng),
            ValueLawKind::Signs => RandomSigns.draw(rng),
        }
    }
}

/// Samples a direction with the default value law.
pub fn sample_weight_vector<R: Rng>(p: usize, s: usize, rng: &mut R) -> Result<WeightVector> {
    sample_weight_vector_with(p, s, &UniformSigned, rng)
}

pub fn sample_weight_vector_with<R: Rng>(p: usize, s: usize, law: &dyn ValueLaw, rng: &mut R) -> Result<WeightVector> {
    if s < 1 || s > p {
        return Err(Error::InvalidSparsity { s, p });
    }
    let k = rng.random_range(1..=s);
    let mut idx = index::sample(rng, p, k).into_vec();
    idx.sort_unstable();
    let val: Vec<f64> = (0..k).map(|_| law.draw(rng)).collect();
    WeightVector::normalized(p, idx, val)
}

/// Distinct projections of the dataset onto `weight`, ascending.
pub fn lambda_biases(weight: &WeightVector, dataset: &Dataset) -> Vec<f64> {
    let mut proj: Vec<f64> = dataset.rows().map(|x| weight.dot(x)).collect();
    proj.sort_unstable_by(f64::total_cmp);
    proj.dedup_by(|a, b| a.to_bits() == b.to_bits());
    proj
}

/// All splits along `weight` with a bias at a sample projection, sorted by
/// bias with duplicates collapsed.
pub fn lambda_set(weight: &WeightVector, dataset: &Dataset) -> Result<Vec<ObliqueSplit>> {
    if weight.dim() != dataset.p() {
        return Err(Error::DimensionMismatch { expected: dataset.p(), found: weight.dim() });
    }
    Ok(lambda_biases(weight, dataset)
        .into_iter()
        .map(|bias| ObliqueSplit { weight: weight.clone(), bias })
        .collect())
}

/// One direction and the thresholds allowed along it.
#[derive(Debug, Clone)]
pub struct Direction {
    pub weight: WeightVector,
    /// Ascending, no duplicates.
    pub biases: Vec<f64>,
}

/// A finite set of oblique splits, grouped by direction.
///
/// Set semantics hold on exact `(w, c)` values; enumeration order is the
/// insertion order of directions and then ascending bias.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    directions: Vec<Direction>,
    lookup: HashMap<WeightVector, usize>,
}

impl CandidateSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_splits<'a>(splits: impl IntoIterator<Item = &'a ObliqueSplit>) -> Self {
        let mut set = Self::new();
        for s in splits {
            set.insert(s.clone());
        }
        set
    }

    fn slot(&mut self, weight: &WeightVector) -> usize {
        if let Some(&i) = self.lookup.get(weight) {
            return i;
        }
        self.directions.push(Direction { weight: weight.clone(), biases: Vec::new() });
        self.lookup.insert(weight.clone(), self.directions.len() - 1);
        self.directions.len() - 1
    }

    /// Adds one split; returns false if it was already present.
    pub fn insert(&mut self, split: ObliqueSplit) -> bool {
        let slot = self.slot(&split.weight);
        let biases = &mut self.directions[slot].biases;
        match biases.binary_search_by(|b| b.total_cmp(&split.bias)) {
            Ok(_) => false,
            Err(pos) => {
                biases.insert(pos, split.bias);
                true
            }
        }
    }

    /// Adds the whole candidate set of `weight` on `dataset`.
    pub fn insert_lambda(&mut self, weight: &WeightVector, dataset: &Dataset) {
        let biases = lambda_biases(weight, dataset);
        let slot = self.slot(weight);
        let existing = &mut self.directions[slot].biases;
        if existing.is_empty() {
            *existing = biases;
        } else {
            existing.extend(biases);
            existing.sort_unstable_by(f64::total_cmp);
            existing.dedup_by(|a, b| a.to_bits() == b.to_bits());
        }
    }

    /// Adds `weight` with biases at the projections of `rows` only.
    pub fn insert_lambda_on(&mut self, weight: &WeightVector, dataset: &Dataset, rows: &[usize]) {
        let mut biases: Vec<f64> = rows.iter().map(|&i| weight.dot(dataset.row(i))).collect();
        biases.sort_unstable_by(f64::total_cmp);
        biases.dedup_by(|a, b| a.to_bits() == b.to_bits());
        let slot = self.slot(weight);
        let existing = &mut self.directions[slot].biases;
        existing.extend(biases);
        existing.sort_unstable_by(f64::total_cmp);
        existing.dedup_by(|a, b| a.to_bits() == b.to_bits());
    }

    pub fn union_with(&mut self, other: &CandidateSet) {
        for d in &other.directions {
            for &bias in &d.biases {
                self.insert(ObliqueSplit { weight: d.weight.clone(), bias });
            }
        }
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    /// Number of distinct splits.
    pub fn len(&self) -> usize {
        self.directions.iter().map(|d| d.biases.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, split: &ObliqueSplit) -> bool {
        self.lookup.get(&split.weight).is_some_and(|&i| {
            self.directions[i].biases.binary_search_by(|b| b.total_cmp(&split.bias)).is_ok()
        })
    }

    pub fn splits(&self) -> impl Iterator<Item = ObliqueSplit> + '_ {
        self.directions
            .iter()
            .flat_map(|d| d.biases.iter().map(move |&bias| ObliqueSplit { weight: d.weight.clone(), bias }))
    }
}

/// Where the refiner's weight vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// `size` vectors; vector `q` is drawn from its own stream of `seed`, so
    /// the pool never has to be materialized.
    Finite { size: usize, seed: u64 },
    /// A caller-supplied list of directions.
    Explicit { weights: Vec<WeightRecord> },
    /// Fresh independent vectors on every draw.
    Infinite,
}

/// The split search space feeding the tree fitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub mode: PoolMode,
    pub sparsity: usize,
    /// Directions drawn per iteration.
    pub subset_size: usize,
}

impl CandidatePool {
    pub fn infinite(sparsity: usize, subset_size: usize) -> Self {
        Self { mode: PoolMode::Infinite, sparsity, subset_size }
    }

    pub fn finite(size: usize, seed: u64, sparsity: usize, subset_size: usize) -> Self {
        Self { mode: PoolMode::Finite { size, seed }, sparsity, subset_size }
    }

    pub fn explicit(weights: &[WeightVector], subset_size: usize) -> Self {
        let sparsity = weights.iter().map(WeightVector::nnz).max().unwrap_or(1);
        Self {
            mode: PoolMode::Explicit { weights: weights.iter().map(WeightRecord::from).collect() },
            sparsity,
            subset_size,
        }
    }

    /// `Some(B)` for finite pools, `None` for the infinite stream.
    pub fn size(&self) -> Option<usize> {
        match &self.mode {
            PoolMode::Finite { size, .. } => Some(*size),
            PoolMode::Explicit { weights } => Some(weights.len()),
            PoolMode::Infinite => None,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.subset_size == 0 {
            return Err(Error::InvalidConfig("subset size must be at least 1".into()));
        }
        if self.size() == Some(0) {
            return Err(Error::EmptyPool);
        }
        if let PoolMode::Explicit { weights } = &self.mode {
            for w in weights {
                w.clone().into_weight(p)?;
            }
        } else if self.sparsity < 1 || self.sparsity > p {
            return Err(Error::InvalidSparsity { s: self.sparsity, p });
        }
        Ok(())
    }

    /// The `q`-th vector of a finite pool (0-based).
    pub fn weight(&self, q: usize, p: usize) -> Result<WeightVector> {
        match &self.mode {
            PoolMode::Finite { size, seed } => {
                if q >= *size {
                    return Err(Error::InvalidConfig(format!("pool index {q} >= {size}")));
                }
                sample_weight_vector(p, self.sparsity, &mut rng::stream(*seed, q as u64))
            }
            PoolMode::Explicit { weights } => weights
                .get(q)
                .ok_or_else(|| Error::InvalidConfig(format!("pool index {q} >= {}", weights.len())))?
                .clone()
                .into_weight(p),
            PoolMode::Infinite => Err(Error::InvalidConfig("the infinite pool has no indexed vectors".into())),
        }
    }

    /// Union of the candidate sets of every pool vector: the one-shot search space.
    pub fn full_candidates(&self, dataset: &Dataset) -> Result<CandidateSet> {
        let b = self.size().ok_or_else(|| Error::InvalidConfig("the infinite pool cannot be enumerated".into()))?;
        self.validate(dataset.p())?;
        let mut set = CandidateSet::new();
        for q in 0..b {
            set.insert_lambda(&self.weight(q, dataset.p())?, dataset);
        }
        Ok(set)
    }
}

/// The per-iteration candidate set.
///
/// A finite pool contributes the union over a uniformly random subset of
/// `min(subset_size, B)` distinct pool indices; the infinite pool contributes
/// `subset_size` freshly sampled directions.
pub fn draw_iteration_candidates<R: Rng>(pool: &CandidatePool, dataset: &Dataset, rng: &mut R) -> Result<CandidateSet> {
    pool.validate(dataset.p())?;
    let p = dataset.p();
    let mut set = CandidateSet::new();
    match pool.size() {
        Some(b) => {
            let mut chosen = index::sample(rng, b, pool.subset_size.min(b)).into_vec();
            chosen.sort_unstable();
            for q in chosen {
                set.insert_lambda(&pool.weight(q, p)?, dataset);
            }
        }
        None => {
            for _ in 0..pool.subset_size {
                let w = sample_weight_vector(p, pool.sparsity, rng)?;
                set.insert_lambda(&w, dataset);
            }
        }
    }
    Ok(set)
}
