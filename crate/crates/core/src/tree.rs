//! Greedy least-squares oblique regression trees.
//!
//! Trees grow breadth-first. At every node each candidate split `(w, c)` is
//! scored by the two-mean squared error of the node's targets, and the winner
//! is drawn uniformly from the near-minimal candidates. Rows with
//! `w . x > c` go right, everything else (including the boundary) goes left.
//!
//! Two regimes are supported. Strict mode splits every node down to depth
//! `H`, empty nodes included, so the tree always has `2^H` leaves. Constrained
//! mode applies minimum sample counts and stops early at pure nodes.

use std::borrow::Cow;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::splitspace::{CandidateSet, Direction, ObliqueSplit, SplitRecord};

const TREE_FORMAT_VERSION: u32 = 1;

/// Directions times node rows above which a node's scan runs on the rayon pool.
const PARALLEL_WORK: usize = 1 << 17;

fn default_tie_epsilon() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Maximum depth `H`.
    pub depth: usize,
    #[serde(default)]
    pub min_samples_leaf: usize,
    #[serde(default)]
    pub min_samples_split: usize,
    pub strict_mode: bool,
    /// Losses within `tie_epsilon * node_sse` of the minimum count as ties.
    #[serde(default = "default_tie_epsilon")]
    pub tie_epsilon: f64,
    /// Constrained mode only: a split must reduce the SSE by at least this
    /// much, measured per training row of the whole tree.
    #[serde(default)]
    pub min_impurity_decrease: f64,
}

impl FitConfig {
    /// Splits every node to depth `depth`, no sample minima.
    pub fn strict(depth: usize) -> Self {
        Self {
            depth,
            min_samples_leaf: 0,
            min_samples_split: 0,
            strict_mode: true,
            tie_epsilon: default_tie_epsilon(),
            min_impurity_decrease: 0.0,
        }
    }

    pub fn constrained(depth: usize, min_samples_leaf: usize, min_samples_split: usize) -> Self {
        Self {
            depth,
            min_samples_leaf,
            min_samples_split,
            strict_mode: false,
            tie_epsilon: default_tie_epsilon(),
            min_impurity_decrease: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidConfig("tree depth must be at least 1".into()));
        }
        if !(self.tie_epsilon >= 0.0 && self.tie_epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("tie_epsilon {} must be finite and >= 0", self.tie_epsilon)));
        }
        if !(self.min_impurity_decrease >= 0.0 && self.min_impurity_decrease.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "min_impurity_decrease {} must be finite and >= 0",
                self.min_impurity_decrease
            )));
        }
        Ok(())
    }

    fn min_leaf(&self) -> usize {
        if self.strict_mode {
            0
        } else {
            self.min_samples_leaf.max(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub split: Option<ObliqueSplit>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub leaf_value: f64,
    pub depth: usize,
    /// Number of training rows that reached the node.
    pub n_samples: usize,
    /// Training rows that reached the node; empty after deserialization.
    pub node_rows: Vec<usize>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// A fitted tree stored as a breadth-first arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliqueTree {
    nodes: Vec<TreeNode>,
    p: usize,
    config: FitConfig,
}

/// Result of scoring one split on one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitLoss {
    pub loss: f64,
    pub beta_right: f64,
    pub beta_left: f64,
}

/// Two-mean squared error of `split` on `rows`. An empty side gets
/// coefficient 0; an empty node has loss 0.
pub fn split_loss(dataset: &Dataset, rows: &[usize], split: &ObliqueSplit) -> SplitLoss {
    let (mut sum_r, mut n_r, mut sum_l, mut n_l) = (0.0, 0usize, 0.0, 0usize);
    for &i in rows {
        if split.goes_right(dataset.row(i)) {
            sum_r += dataset.target(i);
            n_r += 1;
        } else {
            sum_l += dataset.target(i);
            n_l += 1;
        }
    }
    let beta_right = if n_r > 0 { sum_r / n_r as f64 } else { 0.0 };
    let beta_left = if n_l > 0 { sum_l / n_l as f64 } else { 0.0 };
    let loss = rows
        .iter()
        .map(|&i| {
            let beta = if split.goes_right(dataset.row(i)) { beta_right } else { beta_left };
            (dataset.target(i) - beta).powi(2)
        })
        .sum();
    SplitLoss { loss, beta_right, beta_left }
}

fn mean(dataset: &Dataset, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|&i| dataset.target(i)).sum::<f64>() / rows.len() as f64
    }
}

/// Near-minimal candidates of one direction, as bias positions.
struct DirectionScan {
    min: f64,
    ties: Vec<(u32, f64)>,
}

fn scan_direction(
    direction: &Direction,
    dataset: &Dataset,
    rows: &[usize],
    resid: &[f64],
    sse: f64,
    tol: f64,
    min_leaf: usize,
) -> DirectionScan {
    let m = rows.len();
    let mut order: Vec<(f64, f64)> = rows
        .iter()
        .zip(resid)
        .map(|(&i, &r)| (direction.weight.dot(dataset.row(i)), r))
        .collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = resid.iter().sum();

    let mut scan = DirectionScan { min: f64::INFINITY, ties: Vec::new() };
    let (mut j, mut cum) = (0usize, 0.0);
    for (pos, &c) in direction.biases.iter().enumerate() {
        while j < m && order[j].0 <= c {
            cum += order[j].1;
            j += 1;
        }
        let (n_l, n_r) = (j, m - j);
        if n_l < min_leaf || n_r < min_leaf {
            continue;
        }
        let mut gain = 0.0;
        if n_l > 0 {
            gain += cum * cum / n_l as f64;
        }
        if n_r > 0 {
            let right = total - cum;
            gain += right * right / n_r as f64;
        }
        let loss = (sse - gain).max(0.0);
        if loss <= scan.min + tol {
            scan.ties.push((pos as u32, loss));
            if loss < scan.min {
                scan.min = loss;
            }
        }
    }
    let cutoff = scan.min + tol;
    scan.ties.retain(|t| t.1 <= cutoff);
    scan
}

/// Picks a split for one node, or `None` when the node should become a leaf.
///
/// Losses within `tie_epsilon` times the node's unsplit SSE of the minimum
/// are tied and one of them is drawn uniformly, enumerating ties in
/// (direction, bias) order so the draw does not depend on scheduling.
pub fn best_split<R: Rng + ?Sized>(
    dataset: &Dataset,
    rows: &[usize],
    candidates: &CandidateSet,
    config: &FitConfig,
    rng: &mut R,
) -> Option<(ObliqueSplit, f64)> {
    let directions = candidates.directions();
    if candidates.is_empty() {
        return None;
    }
    let first = rows.first().map(|&i| dataset.target(i));
    let pure = rows.iter().all(|&i| Some(dataset.target(i)) == first);

    if !config.strict_mode {
        if rows.len() < config.min_samples_split.max(2) || pure {
            return None;
        }
    } else if pure {
        // Empty or constant node: every candidate has loss 0.
        let k = rng.random_range(0..candidates.len());
        let split = nth_split(directions, k);
        return Some((split, 0.0));
    }

    let mu = mean(dataset, rows);
    let resid: Vec<f64> = rows.iter().map(|&i| dataset.target(i) - mu).collect();
    let sse: f64 = resid.iter().map(|r| r * r).sum();
    let tol = config.tie_epsilon * sse;
    let min_leaf = config.min_leaf();

    let scan = |d: &Direction| scan_direction(d, dataset, rows, &resid, sse, tol, min_leaf);
    let scans: Vec<DirectionScan> = if directions.len() * rows.len() >= PARALLEL_WORK {
        directions.par_iter().map(scan).collect()
    } else {
        directions.iter().map(scan).collect()
    };

    let min = scans.iter().map(|s| s.min).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let cutoff = min + tol;
    let tied: Vec<(usize, u32)> = scans
        .iter()
        .enumerate()
        .flat_map(|(d, s)| s.ties.iter().filter(|t| t.1 <= cutoff).map(move |t| (d, t.0)))
        .collect();
    let (d, pos) = tied[if tied.len() > 1 { rng.random_range(0..tied.len()) } else { 0 }];
    let split = ObliqueSplit { weight: directions[d].weight.clone(), bias: directions[d].biases[pos as usize] };
    let loss = split_loss(dataset, rows, &split).loss;

    if !config.strict_mode && config.min_impurity_decrease > 0.0 {
        let decrease = (sse - loss) / dataset.n() as f64;
        if decrease < config.min_impurity_decrease {
            return None;
        }
    }
    Some((split, loss))
}

fn nth_split(directions: &[Direction], mut k: usize) -> ObliqueSplit {
    for d in directions {
        if k < d.biases.len() {
            return ObliqueSplit { weight: d.weight.clone(), bias: d.biases[k] };
        }
        k -= d.biases.len();
    }
    unreachable!("split index beyond candidate count")
}

/// What a per-node candidate generator sees.
pub struct NodeContext<'a> {
    pub node_id: usize,
    pub depth: usize,
    pub rows: &'a [usize],
}

/// Fits a tree whose every node searches the same candidate set.
pub fn fit_tree<R: Rng + ?Sized>(
    dataset: &Dataset,
    candidates: &CandidateSet,
    config: &FitConfig,
    rng: &mut R,
) -> Result<ObliqueTree> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("candidate set is empty".into()));
    }
    fit_tree_with(dataset, config, rng, |_, _| Cow::Borrowed(candidates))
}

/// Fits a tree drawing each node's candidates from `candidates_for`.
///
/// The generator is called once per node in breadth-first order, before the
/// node's tie-breaking draw.
pub fn fit_tree_with<'c, R, F>(dataset: &Dataset, config: &FitConfig, rng: &mut R, mut candidates_for: F) -> Result<ObliqueTree>
where
    R: Rng + ?Sized,
    F: FnMut(&NodeContext<'_>, &mut R) -> Cow<'c, CandidateSet>,
{
    config.validate()?;
    let all: Vec<usize> = (0..dataset.n()).collect();
    let mut nodes = vec![TreeNode {
        split: None,
        left: None,
        right: None,
        leaf_value: mean(dataset, &all),
        depth: 0,
        n_samples: all.len(),
        node_rows: all,
    }];

    let mut id = 0;
    while id < nodes.len() {
        if nodes[id].depth < config.depth {
            let rows = std::mem::take(&mut nodes[id].node_rows);
            let ctx = NodeContext { node_id: id, depth: nodes[id].depth, rows: &rows };
            let cands = candidates_for(&ctx, rng);
            if let Some((split, _)) = best_split(dataset, &rows, &cands, config, rng) {
                let (right, left): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| split.goes_right(dataset.row(i)));
                let depth = nodes[id].depth + 1;
                let l = nodes.len();
                for side in [left, right] {
                    nodes.push(TreeNode {
                        split: None,
                        left: None,
                        right: None,
                        leaf_value: mean(dataset, &side),
                        depth,
                        n_samples: side.len(),
                        node_rows: side,
                    });
                }
                let node = &mut nodes[id];
                node.split = Some(split);
                node.left = Some(l);
                node.right = Some(l + 1);
            }
            nodes[id].node_rows = rows;
        }
        id += 1;
    }
    Ok(ObliqueTree { nodes, p: dataset.p(), config: config.clone() })
}

impl ObliqueTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    /// Configured maximum depth `H`.
    pub fn depth(&self) -> usize {
        self.config.depth
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    /// Internal nodes, counted with multiplicity.
    pub fn n_splits(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    /// Node ids making up the partition after `h` rounds of splitting:
    /// the nodes at depth `h` plus shallower leaves, in breadth-first order.
    pub fn level(&self, h: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| {
                let n = &self.nodes[i];
                n.depth == h || (n.depth < h && n.is_leaf())
            })
            .collect()
    }

    /// Partitions for every `h` in `0..=H`.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        (0..=self.depth()).map(|h| self.level(h)).collect()
    }

    fn leaf_index(&self, x: &[f64]) -> usize {
        let mut id = 0;
        while let Some(split) = &self.nodes[id].split {
            id = if split.goes_right(x) { self.nodes[id].right } else { self.nodes[id].left }
                .expect("internal node has both children");
        }
        id
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch { expected: self.p, found: x.len() });
        }
        Ok(self.nodes[self.leaf_index(x)].leaf_value)
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        if dataset.p() != self.p {
            return Err(Error::DimensionMismatch { expected: self.p, found: dataset.p() });
        }
        Ok(dataset.rows().map(|x| self.nodes[self.leaf_index(x)].leaf_value).collect())
    }

    /// Recomputes `node_rows` by routing `dataset`, e.g. after loading from JSON.
    pub fn attach_rows(&mut self, dataset: &Dataset) -> Result<()> {
        if dataset.p() != self.p {
            return Err(Error::DimensionMismatch { expected: self.p, found: dataset.p() });
        }
        for node in &mut self.nodes {
            node.node_rows.clear();
        }
        for (i, path) in self.paths(dataset).into_iter().enumerate() {
            let mut last = usize::MAX;
            for id in path {
                if id != last {
                    self.nodes[id].node_rows.push(i);
                    last = id;
                }
            }
        }
        for node in &mut self.nodes {
            node.n_samples = node.node_rows.len();
        }
        Ok(())
    }

    /// Sum of squared residuals on the training rows stored in the leaves.
    pub fn training_sse(&self, dataset: &Dataset) -> f64 {
        self.leaves()
            .map(|leaf| leaf.node_rows.iter().map(|&i| (dataset.target(i) - leaf.leaf_value).powi(2)).sum::<f64>())
            .sum()
    }

    /// Distinct splits in breadth-first order.
    pub fn extract_splits(&self) -> Vec<ObliqueSplit> {
        let mut out: Vec<ObliqueSplit> = Vec::new();
        for split in self.nodes.iter().filter_map(|n| n.split.as_ref()) {
            if !out.iter().any(|s| s.same_as(split)) {
                out.push(split.clone());
            }
        }
        out
    }

    /// Ancestor of each routed row at every depth `0..=H` (leaves repeat).
    fn paths(&self, dataset: &Dataset) -> Vec<Vec<usize>> {
        dataset
            .rows()
            .map(|x| {
                let mut path = Vec::with_capacity(self.depth() + 1);
                let mut id = 0;
                path.push(id);
                while let Some(split) = &self.nodes[id].split {
                    id = if split.goes_right(x) { self.nodes[id].right } else { self.nodes[id].left }
                        .expect("internal node has both children");
                    path.push(id);
                }
                path.resize(self.depth() + 1, id);
                path
            })
            .collect()
    }

    /// Row sets of the level-`h` partition, including empty cells, sorted.
    fn level_partitions(&self, dataset: &Dataset) -> Vec<Vec<Vec<usize>>> {
        let paths = self.paths(dataset);
        (0..=self.depth())
            .map(|h| {
                let cells = self.level(h);
                let mut sets: Vec<Vec<usize>> = vec![Vec::new(); cells.len()];
                for (i, path) in paths.iter().enumerate() {
                    let slot = cells.binary_search(&path[h]).expect("routed node belongs to its level");
                    sets[slot].push(i);
                }
                sets.sort();
                sets
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(TreeDocument {
            version: TREE_FORMAT_VERSION,
            p: self.p,
            config: self.config.clone(),
            root: self.node_document(0),
        })
        .expect("tree documents serialize")
    }

    fn node_document(&self, id: usize) -> NodeDocument {
        let n = &self.nodes[id];
        NodeDocument {
            value: n.leaf_value,
            n_samples: n.n_samples,
            split: n.split.as_ref().map(ObliqueSplit::record),
            left: n.left.map(|c| Box::new(self.node_document(c))),
            right: n.right.map(|c| Box::new(self.node_document(c))),
        }
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let doc: TreeDocument = serde_json::from_value(value)?;
        if doc.version != TREE_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported tree format version {}", doc.version)));
        }
        doc.config.validate()?;
        let mut nodes = Vec::new();
        let mut queue = std::collections::VecDeque::from([(doc.root, 0usize)]);
        while let Some((node, depth)) = queue.pop_front() {
            let id = nodes.len();
            let split = node.split.map(|s| s.into_split(doc.p)).transpose()?;
            let children = match (node.left, node.right, &split) {
                (Some(l), Some(r), Some(_)) => Some((l, r)),
                (None, None, None) => None,
                _ => return Err(Error::InvalidConfig(format!("node {id} mixes leaf and split fields"))),
            };
            let (left, right) = match children {
                Some((l, r)) => {
                    let base = id + 1 + queue.len();
                    queue.push_back((*l, depth + 1));
                    queue.push_back((*r, depth + 1));
                    (Some(base), Some(base + 1))
                }
                None => (None, None),
            };
            if depth > doc.config.depth {
                return Err(Error::InvalidConfig(format!("node {id} is deeper than {}", doc.config.depth)));
            }
            nodes.push(TreeNode {
                split,
                left,
                right,
                leaf_value: node.value,
                depth,
                n_samples: node.n_samples,
                node_rows: Vec::new(),
            });
        }
        Ok(Self { nodes, p: doc.p, config: doc.config })
    }
}

/// Whether the two trees induce the same multiset of row sets on `dataset`
/// at every level.
pub fn sample_equivalent(a: &ObliqueTree, b: &ObliqueTree, dataset: &Dataset) -> Result<bool> {
    if a.depth() != b.depth() {
        return Err(Error::DepthMismatch { left: a.depth(), right: b.depth() });
    }
    for tree in [a, b] {
        if tree.dim() != dataset.p() {
            return Err(Error::DimensionMismatch { expected: dataset.p(), found: tree.dim() });
        }
    }
    Ok(a.level_partitions(dataset) == b.level_partitions(dataset))
}

#[derive(Serialize, Deserialize)]
struct TreeDocument {
    version: u32,
    p: usize,
    config: FitConfig,
    root: NodeDocument,
}

#[derive(Serialize, Deserialize)]
struct NodeDocument {
    value: f64,
    n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<Box<NodeDocument>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<Box<NodeDocument>>,
}
