#![allow(dead_code)]

//! Helpers shared by the integration and acceptance suites.

pub mod lp;

use progressive_oblique::data::{Dataset, FeatureMode};
use progressive_oblique::rng;
use rand::Rng;
use rand_distr::StandardNormal;

/// Binary features with Gaussian targets: ties between different row
/// partitions have probability zero.
pub fn noisy_binary(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, 77);
    let features: Vec<f64> = (0..n * p).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    let targets: Vec<f64> = features
        .chunks_exact(p)
        .map(|x| {
            let parity = if (x[0] + x[1]) as i64 % 2 == 1 { 1.0 } else { -1.0 };
            parity + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Dataset::from_flat(features, p, targets, FeatureMode::Binary).unwrap()
}

/// Uniform `[0, 1]` features with Gaussian targets.
pub fn noisy_continuous(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, 78);
    let features: Vec<f64> = (0..n * p).map(|_| rng.random::<f64>()).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Dataset::from_flat(features, p, targets, FeatureMode::Continuous).unwrap()
}

/// Sum of squared deviations from the mean, by direct summation.
pub fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum()
}
