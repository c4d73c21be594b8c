//! Progressive split refinement.
//!
//! Iteration `l` fits a tree over `S^(l-1) ∪ W_l`, where `S^(l-1)` holds the
//! splits of the previous tree and `W_l` is a fresh draw from the candidate
//! pool, then keeps the new tree's splits as `S^(l)`. Every iteration uses
//! its own random stream keyed by `(seed, l)`, so a run can be checkpointed
//! and resumed without changing a single bit of the outcome.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::splitspace::{draw_iteration_candidates, CandidatePool, CandidateSet, ObliqueSplit, SplitRecord};
use crate::tree::{fit_tree, FitConfig, ObliqueTree};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveConfig {
    pub pool: CandidatePool,
    /// Number of refinement iterations `b`.
    pub iterations: usize,
    pub fit: FitConfig,
    pub seed: u64,
}

impl ProgressiveConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        self.pool.validate(p)?;
        self.fit.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub training_sse: f64,
    pub n_splits: usize,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct ProgressiveResult {
    pub final_tree: ObliqueTree,
    /// `S^(b)`, equal to the final tree's distinct splits.
    pub split_set: Vec<ObliqueSplit>,
    pub history: Vec<IterationRecord>,
}

/// Resumable refinement state.
#[derive(Debug, Clone)]
pub struct Refiner<'d> {
    dataset: &'d Dataset,
    config: ProgressiveConfig,
    iteration: usize,
    splits: Vec<ObliqueSplit>,
    tree: Option<ObliqueTree>,
    history: Vec<IterationRecord>,
}

impl<'d> Refiner<'d> {
    pub fn new(dataset: &'d Dataset, config: ProgressiveConfig) -> Result<Self> {
        config.validate(dataset.p())?;
        Ok(Self { dataset, config, iteration: 0, splits: Vec::new(), tree: None, history: Vec::new() })
    }

    /// Completed iterations `l`.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn splits(&self) -> &[ObliqueSplit] {
        &self.splits
    }

    pub fn tree(&self) -> Option<&ObliqueTree> {
        self.tree.as_ref()
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    pub fn config(&self) -> &ProgressiveConfig {
        &self.config
    }

    /// Runs one iteration and returns its record.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        let start = Instant::now();
        let l = self.iteration + 1;
        let mut rng = rng::stream(self.config.seed, l as u64);
        let mut candidates = CandidateSet::from_splits(&self.splits);
        candidates.union_with(&draw_iteration_candidates(&self.config.pool, self.dataset, &mut rng)?);
        let tree = fit_tree(self.dataset, &candidates, &self.config.fit, &mut rng)?;
        self.splits = tree.extract_splits();
        self.history.push(IterationRecord {
            iteration: l,
            training_sse: tree.training_sse(self.dataset),
            n_splits: self.splits.len(),
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        self.tree = Some(tree);
        self.iteration = l;
        Ok(self.history.last().expect("just pushed"))
    }

    /// Runs up to `extra` more iterations, stopping early once `stop` returns true.
    pub fn run_until<F>(&mut self, extra: usize, mut stop: F) -> Result<()>
    where
        F: FnMut(&IterationRecord, &ObliqueTree) -> bool,
    {
        for _ in 0..extra {
            self.step()?;
            let tree = self.tree.as_ref().expect("tree exists after a step");
            if stop(self.history.last().expect("history has a record per step"), tree) {
                break;
            }
        }
        Ok(())
    }

    pub fn run(&mut self, extra: usize) -> Result<()> {
        self.run_until(extra, |_, _| false)
    }

    pub fn into_result(self) -> Result<ProgressiveResult> {
        let final_tree = self.tree.ok_or_else(|| Error::InvalidConfig("no iteration has run yet".into()))?;
        Ok(ProgressiveResult { final_tree, split_set: self.splits, history: self.history })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            iteration: self.iteration,
            seed: self.config.seed,
            iterations: self.config.iterations,
            pool: self.config.pool.clone(),
            fit: self.config.fit.clone(),
            p: self.dataset.p(),
            splits: self.splits.iter().map(ObliqueSplit::record).collect(),
            history: self.history.clone(),
            tree: self.tree.as_ref().map(ObliqueTree::to_json),
        }
    }

    /// Rebuilds a refiner from a checkpoint taken on the same dataset.
    pub fn resume(dataset: &'d Dataset, checkpoint: Checkpoint) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", checkpoint.version)));
        }
        if checkpoint.p != dataset.p() {
            return Err(bad(format!("checkpoint has p = {}, dataset has p = {}", checkpoint.p, dataset.p())));
        }
        let config = ProgressiveConfig {
            pool: checkpoint.pool,
            iterations: checkpoint.iterations,
            fit: checkpoint.fit,
            seed: checkpoint.seed,
        };
        config.validate(dataset.p()).map_err(|e| bad(e.to_string()))?;
        if checkpoint.history.len() != checkpoint.iteration {
            return Err(bad(format!(
                "history has {} records for {} iterations",
                checkpoint.history.len(),
                checkpoint.iteration
            )));
        }
        let splits = checkpoint
            .splits
            .into_iter()
            .map(|s| s.into_split(dataset.p()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| bad(format!("stored split invalid: {e}")))?;
        let max_splits = (1usize << config.fit.depth.min(63)) - 1;
        if splits.len() > max_splits {
            return Err(bad(format!("{} splits exceed the {max_splits} a depth-{} tree can hold", splits.len(), config.fit.depth)));
        }
        let tree = match (checkpoint.tree, checkpoint.iteration) {
            (None, 0) => None,
            (Some(doc), l) if l > 0 => {
                let mut tree = ObliqueTree::from_json(doc).map_err(|e| bad(format!("stored tree invalid: {e}")))?;
                tree.attach_rows(dataset)?;
                let from_tree = tree.extract_splits();
                let same = from_tree.len() == splits.len() && from_tree.iter().zip(&splits).all(|(a, b)| a.same_as(b));
                if !same {
                    return Err(bad("stored splits do not match the stored tree".into()));
                }
                Some(tree)
            }
            _ => return Err(bad("tree presence does not match the iteration count".into())),
        };
        if tree.is_none() && !splits.is_empty() {
            return Err(bad("splits stored before the first iteration".into()));
        }
        Ok(Self { dataset, config, iteration: checkpoint.iteration, splits, tree, history: checkpoint.history })
    }
}

/// Serialized refinement state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub iteration: usize,
    pub seed: u64,
    pub iterations: usize,
    pub pool: CandidatePool,
    pub fit: FitConfig,
    pub p: usize,
    pub splits: Vec<SplitRecord>,
    pub history: Vec<IterationRecord>,
    #[serde(default)]
    pub tree: Option<serde_json::Value>,
}

/// Runs `config.iterations` refinement iterations.
pub fn refine(dataset: &Dataset, config: &ProgressiveConfig) -> Result<ProgressiveResult> {
    refine_until(dataset, config, |_, _| false)
}

/// Like [`refine`], but stops after the first iteration for which `stop` holds.
pub fn refine_until<F>(dataset: &Dataset, config: &ProgressiveConfig, stop: F) -> Result<ProgressiveResult>
where
    F: FnMut(&IterationRecord, &ObliqueTree) -> bool,
{
    let mut refiner = Refiner::new(dataset, config.clone())?;
    refiner.run_until(config.iterations, stop)?;
    refiner.into_result()
}

/// Feature support assumed by [`iteration_budget`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetMode {
    Continuous,
    /// Discrete features whose smallest cell probability is `d_min`.
    Discrete { d_min: f64 },
}

/// Lower bound on `#S * b` under which the refined tree matches the one-shot
/// tree over a finite pool of `pool_size` vectors with high probability.
///
/// Continuous: `ceil(n 2^H B ln(2^H B))`.
/// Discrete: `ceil(2^(H+s+1) B ln(2^H B) / d_min)`.
pub fn iteration_budget(n: usize, depth: usize, pool_size: usize, sparsity: usize, mode: BudgetMode) -> Result<u64> {
    if n == 0 || depth == 0 || pool_size == 0 || sparsity == 0 {
        return Err(Error::InvalidConfig("budget parameters must be positive".into()));
    }
    let leaves = 2f64.powi(depth as i32);
    let b = pool_size as f64;
    let log = (leaves * b).ln();
    let raw = match mode {
        BudgetMode::Continuous => n as f64 * leaves * b * log,
        BudgetMode::Discrete { d_min } => {
            if !(d_min > 0.0 && d_min <= 1.0) {
                return Err(Error::InvalidConfig(format!("d_min {d_min} must lie in (0, 1]")));
            }
            2f64.powi((depth + sparsity + 1) as i32) * b * log / d_min
        }
    };
    let ceil = raw.ceil();
    if !ceil.is_finite() || ceil >= u64::MAX as f64 {
        return Err(Error::Overflow);
    }
    Ok(ceil as u64)
}
