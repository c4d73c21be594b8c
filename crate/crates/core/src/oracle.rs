//! Brute-force references for small binary problems.
//!
//! * Every way a hyperplane can cut the vertices of `{0,1}^k`, found by
//!   scanning integer weights in `{-5..5}^k` with half-integer biases.
//! * The best variance ratio a single split achieves on the parity function.
//! * Greedy trees over every distinguishable sparse split of a binary dataset.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMode};
use crate::error::{Error, Result};
use crate::splitspace::{CandidateSet, WeightVector};
use crate::tree::{fit_tree, FitConfig, ObliqueTree};

const GRID: i64 = 5;
pub const MAX_CUBE_DIM: usize = 4;

/// A subset of cube vertices cut off by a hyperplane.
///
/// Vertex `v` is encoded by the integer whose bit `j` is `v_j`; `positive`
/// has bit `v` set when `w . v > c`, with `c = bias_twice / 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dichotomy {
    pub dim: usize,
    pub positive: u32,
    pub weight: Vec<i64>,
    /// Twice the bias; always odd, so no vertex lies on the hyperplane.
    pub bias_twice: i64,
}

fn vertex_dot(weight: &[i64], v: u32) -> i64 {
    weight.iter().enumerate().filter(|(j, _)| v >> j & 1 == 1).map(|(_, w)| w).sum()
}

impl Dichotomy {
    pub fn positive_vertices(&self) -> Vec<u32> {
        (0..1u32 << self.dim).filter(|v| self.positive >> v & 1 == 1).collect()
    }

    /// Checks the certificate with integer arithmetic.
    pub fn verify(&self) -> bool {
        (0..1u32 << self.dim).all(|v| (2 * vertex_dot(&self.weight, v) > self.bias_twice) == (self.positive >> v & 1 == 1))
    }

    pub fn complement_mask(&self) -> u32 {
        !self.positive & ((1u64 << (1u32 << self.dim)) - 1) as u32
    }
}

/// All threshold dichotomies of `{0,1}^dim`, sorted by vertex mask. The
/// certificate kept for each is the first found in grid order among nonzero
/// weights.
pub fn enumerate_threshold_dichotomies(dim: usize) -> Result<Vec<Dichotomy>> {
    if !(1..=MAX_CUBE_DIM).contains(&dim) {
        return Err(Error::Unsupported(format!("cube dimension {dim} outside 1..={MAX_CUBE_DIM}")));
    }
    let vertices = 1u32 << dim;
    let side = (2 * GRID + 1) as usize;
    let mut found: BTreeMap<u32, Dichotomy> = BTreeMap::new();
    for code in 0..side.pow(dim as u32) {
        let weight: Vec<i64> = (0..dim).map(|j| (code / side.pow(j as u32) % side) as i64 - GRID).collect();
        if weight.iter().all(|&w| w == 0) {
            continue;
        }
        let dots: Vec<i64> = (0..vertices).map(|v| vertex_dot(&weight, v)).collect();
        let lo = dots.iter().min().copied().unwrap_or(0);
        let hi = dots.iter().max().copied().unwrap_or(0);
        // Biases k + 1/2 for k in lo-1..=hi cover every distinct cut.
        for k in lo - 1..=hi {
            let bias_twice = 2 * k + 1;
            let positive = dots
                .iter()
                .enumerate()
                .filter(|(_, &d)| 2 * d > bias_twice)
                .fold(0u32, |m, (v, _)| m | 1 << v);
            found.entry(positive).or_insert_with(|| Dichotomy { dim, positive, weight: weight.clone(), bias_twice });
        }
    }
    Ok(found.into_values().collect())
}

/// Parity (`+1` odd, `-1` even) of vertex `v`.
fn parity(v: u32) -> i64 {
    if v.count_ones() % 2 == 1 {
        1
    } else {
        -1
    }
}

/// Smallest achievable `E[Var(Y | side)] / Var(Y)` over one threshold split
/// of the parity function on uniform `{0,1}^dim`, as an exact fraction
/// `(numerator, denominator)` in lowest terms.
pub fn xor_best_alpha_exact(dim: usize) -> Result<(i128, i128)> {
    let dichotomies = enumerate_threshold_dichotomies(dim)?;
    let total = 1i128 << dim;
    // Var(Y) = 1 and E[Y] = 0, so the ratio is 1 - sum_side S_side^2 / (|side| N).
    // Track the best explained part as a fraction a / b.
    let (mut best_a, mut best_b) = (0i128, 1i128);
    for d in &dichotomies {
        let (mut a, mut b) = (0i128, 1i128);
        for side in [d.positive, d.complement_mask()] {
            let size = side.count_ones() as i128;
            if size == 0 {
                continue;
            }
            let sum: i128 = (0..1u32 << dim).filter(|v| side >> v & 1 == 1).map(|v| parity(v) as i128).sum();
            // a/b + sum^2 / (size * N)
            let (c, e) = (sum * sum, size * total);
            a = a * e + c * b;
            b *= e;
            let g = gcd(a, b);
            a /= g;
            b /= g;
        }
        if a * best_b > best_a * b {
            best_a = a;
            best_b = b;
        }
    }
    let (num, den) = (best_b - best_a, best_b);
    let g = gcd(num, den);
    Ok((num / g, den / g))
}

pub fn xor_best_alpha(dim: usize) -> Result<f64> {
    let (num, den) = xor_best_alpha_exact(dim)?;
    Ok(num as f64 / den as f64)
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Largest instance the brute-force tree accepts.
pub const MAX_ORACLE_P: usize = 6;
pub const MAX_ORACLE_SPARSITY: usize = 3;
pub const MAX_ORACLE_DEPTH: usize = 3;

fn subsets(p: usize, max: usize) -> Vec<Vec<usize>> {
    (1u32..1 << p)
        .filter(|m| (m.count_ones() as usize) <= max)
        .map(|m| (0..p).filter(|j| m >> j & 1 == 1).collect())
        .collect()
}

/// Directions realizing every cut of binary data by a hyperplane with at most
/// `sparsity` nonzero weights, each certificate lifted into `R^p`.
pub fn oracle_directions(p: usize, sparsity: usize) -> Result<Vec<WeightVector>> {
    if sparsity < 1 || sparsity > p {
        return Err(Error::InvalidSparsity { s: sparsity, p });
    }
    if p > MAX_ORACLE_P || sparsity > MAX_ORACLE_SPARSITY {
        return Err(Error::Unsupported(format!(
            "brute force limited to p <= {MAX_ORACLE_P}, s <= {MAX_ORACLE_SPARSITY}"
        )));
    }
    let per_dim: Vec<Vec<Dichotomy>> =
        (1..=sparsity).map(enumerate_threshold_dichotomies).collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for support in subsets(p, sparsity) {
        for d in &per_dim[support.len() - 1] {
            let w = WeightVector::normalized(p, support.clone(), d.weight.iter().map(|&v| v as f64).collect())?;
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
    }
    Ok(out)
}

/// Every distinguishable split of `dataset` with sparsity `sparsity`.
pub fn oracle_candidates(dataset: &Dataset, sparsity: usize) -> Result<CandidateSet> {
    if dataset.mode() != FeatureMode::Binary {
        return Err(Error::Unsupported("the brute-force oracle needs binary features".into()));
    }
    let mut set = CandidateSet::new();
    for w in oracle_directions(dataset.p(), sparsity)? {
        set.insert_lambda(&w, dataset);
    }
    Ok(set)
}

/// Greedy tree searching every split distinguishable on the sample.
pub fn ideal_tree_bruteforce<R: Rng + ?Sized>(
    dataset: &Dataset,
    sparsity: usize,
    config: &FitConfig,
    rng: &mut R,
) -> Result<ObliqueTree> {
    if config.depth > MAX_ORACLE_DEPTH {
        return Err(Error::Unsupported(format!("brute force limited to depth <= {MAX_ORACLE_DEPTH}")));
    }
    let candidates = oracle_candidates(dataset, sparsity)?;
    fit_tree(dataset, &candidates, config, rng)
}
