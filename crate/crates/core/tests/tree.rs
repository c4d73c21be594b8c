mod common;

use progressive_oblique::data::{Dataset, FeatureMode};
use progressive_oblique::oracle::{ideal_tree_bruteforce, oracle_directions};
use progressive_oblique::rng;
use progressive_oblique::splitspace::{CandidatePool, CandidateSet, ObliqueSplit, WeightVector};
use progressive_oblique::tree::{best_split, fit_tree, sample_equivalent, split_loss, FitConfig, ObliqueTree};
use proptest::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};

fn line(xs: &[f64], ys: &[f64]) -> Dataset {
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    Dataset::from_rows(&rows, ys.to_vec(), FeatureMode::Continuous).unwrap()
}

fn axis_candidates(d: &Dataset) -> CandidateSet {
    let mut set = CandidateSet::new();
    for j in 0..d.p() {
        set.insert_lambda(&WeightVector::basis(d.p(), j).unwrap(), d);
    }
    set
}

fn random_candidates(d: &Dataset, count: usize, s: usize, seed: u64) -> CandidateSet {
    CandidatePool::finite(count, seed, s, count).full_candidates(d).unwrap()
}

#[test]
fn perfect_separation_has_zero_loss() {
    let d = line(&[0.9, 0.8, 0.1, 0.2], &[1.0, 1.0, -1.0, -1.0]);
    let split = ObliqueSplit::new(WeightVector::basis(1, 0).unwrap(), 0.5).unwrap();
    let l = split_loss(&d, &[0, 1, 2, 3], &split);
    assert_eq!((l.loss, l.beta_right, l.beta_left), (0.0, 1.0, -1.0));
}

#[test]
fn empty_node_loss_is_zero() {
    let d = line(&[0.5], &[3.0]);
    let split = ObliqueSplit::new(WeightVector::basis(1, 0).unwrap(), 0.5).unwrap();
    let l = split_loss(&d, &[], &split);
    assert_eq!((l.loss, l.beta_right, l.beta_left), (0.0, 0.0, 0.0));
}

#[test]
fn loss_matches_two_group_sse() {
    for seed in 0..30 {
        let d = common::noisy_continuous(12, 3, seed);
        let set = random_candidates(&d, 5, 3, seed);
        let rows: Vec<usize> = (0..12).collect();
        for split in set.splits() {
            let (right, left): (Vec<f64>, Vec<f64>) = {
                let mut r = Vec::new();
                let mut l = Vec::new();
                for i in 0..12 {
                    let dot: f64 = split.weight.to_dense().iter().zip(d.row(i)).map(|(a, b)| a * b).sum();
                    if dot > split.bias { r.push(d.target(i)) } else { l.push(d.target(i)) }
                }
                (r, l)
            };
            let expected = common::sse(&right) + common::sse(&left);
            assert!((split_loss(&d, &rows, &split).loss - expected).abs() <= 1e-10);
        }
    }
}

#[test]
fn singleton_candidate_is_returned() {
    let d = common::noisy_continuous(10, 2, 1);
    let mut set = CandidateSet::new();
    let only = ObliqueSplit::new(WeightVector::basis(2, 1).unwrap(), d.value(3, 1)).unwrap();
    set.insert(only.clone());
    let rows: Vec<usize> = (0..10).collect();
    let (chosen, _) = best_split(&d, &rows, &set, &FitConfig::strict(1), &mut rng::stream(0, 0)).unwrap();
    assert!(chosen.same_as(&only));
}

#[test]
fn tied_partitions_are_chosen_evenly() {
    // Both directions put rows {2, 3} on the right.
    let rows = vec![vec![0.1, 0.2], vec![0.2, 0.1], vec![0.8, 0.9], vec![0.9, 0.8]];
    let d = Dataset::from_rows(&rows, vec![0.0, 0.3, 2.0, 2.4], FeatureMode::Continuous).unwrap();
    let a = ObliqueSplit::new(WeightVector::basis(2, 0).unwrap(), 0.5).unwrap();
    let b = ObliqueSplit::new(WeightVector::basis(2, 1).unwrap(), 0.5).unwrap();
    let mut set = CandidateSet::new();
    set.insert(a.clone());
    set.insert(b);
    let all: Vec<usize> = (0..4).collect();
    let trials = 1000u64;
    let picked_a = (0..trials)
        .filter(|&seed| {
            let (s, _) = best_split(&d, &all, &set, &FitConfig::strict(1), &mut rng::stream(seed, 0)).unwrap();
            s.same_as(&a)
        })
        .count() as u64;
    let binom = Binomial::new(0.5, trials).unwrap();
    let tail = binom.cdf(picked_a.min(trials - picked_a));
    assert!(2.0 * tail > 0.01, "picked the first split {picked_a} of {trials} times");
}

#[test]
fn best_loss_matches_exhaustive_scan() {
    for seed in 0..20 {
        let d = common::noisy_continuous(10, 4, 100 + seed);
        let set = random_candidates(&d, 3, 3, seed);
        assert!(set.len() >= 20);
        let rows: Vec<usize> = (0..10).collect();
        let minimum = set.splits().map(|s| split_loss(&d, &rows, &s).loss).fold(f64::INFINITY, f64::min);
        let (_, loss) = best_split(&d, &rows, &set, &FitConfig::strict(1), &mut rng::stream(seed, 1)).unwrap();
        assert_eq!(loss, minimum);
    }
}

#[test]
fn one_split_fits_a_step() {
    let d = line(&[0.1, 0.2, 0.3, 0.4], &[0.0, 0.0, 1.0, 1.0]);
    let tree = fit_tree(&d, &axis_candidates(&d), &FitConfig::strict(1), &mut rng::stream(0, 0)).unwrap();
    assert_eq!(tree.training_sse(&d), 0.0);
    assert_eq!(tree.root().split.as_ref().unwrap().bias, 0.2);
}

#[test]
fn strict_depth_three_is_complete() {
    let d = common::noisy_continuous(50, 3, 2);
    let tree = fit_tree(&d, &random_candidates(&d, 6, 2, 2), &FitConfig::strict(3), &mut rng::stream(2, 0)).unwrap();
    assert_eq!(tree.n_leaves(), 8);
    assert_eq!(tree.n_splits(), 7);
    assert!(tree.extract_splits().len() <= 7);
}

#[test]
fn exhaustive_pool_matches_ideal_tree() {
    for seed in 0..5 {
        let d = common::noisy_binary(30, 4, seed);
        let config = FitConfig::strict(2);
        let pool = CandidatePool::explicit(&oracle_directions(4, 2).unwrap(), 1);
        let tree = fit_tree(&d, &pool.full_candidates(&d).unwrap(), &config, &mut rng::stream(seed, 0)).unwrap();
        let ideal = ideal_tree_bruteforce(&d, 2, &config, &mut rng::stream(seed, 1)).unwrap();
        assert!((tree.training_sse(&d) - ideal.training_sse(&d)).abs() <= 1e-10);
    }
}

#[test]
fn single_leaf_predicts_the_mean() {
    let d = common::noisy_continuous(8, 2, 3);
    let config = FitConfig::constrained(2, 1, 100);
    let tree = fit_tree(&d, &axis_candidates(&d), &config, &mut rng::stream(3, 0)).unwrap();
    assert_eq!(tree.n_leaves(), 1);
    let mean = d.targets().iter().sum::<f64>() / 8.0;
    assert!((tree.predict(&[0.3, 0.9]).unwrap() - mean).abs() <= 1e-12);
}

/// Routes `x` by walking child links directly, returning the leaf index.
fn route(tree: &ObliqueTree, x: &[f64]) -> usize {
    let nodes = tree.nodes();
    let mut k = 0;
    while let Some(split) = &nodes[k].split {
        let dot: f64 = split.weight.to_dense().iter().zip(x).map(|(a, b)| a * b).sum();
        k = if dot > split.bias { nodes[k].right.unwrap() } else { nodes[k].left.unwrap() };
    }
    k
}

#[test]
fn training_predictions_are_co_leaf_means() {
    let d = common::noisy_continuous(60, 4, 4);
    let tree = fit_tree(&d, &random_candidates(&d, 8, 3, 4), &FitConfig::strict(3), &mut rng::stream(4, 0)).unwrap();
    let leaves: Vec<usize> = (0..d.n()).map(|i| route(&tree, d.row(i))).collect();
    for i in 0..d.n() {
        let mates: Vec<f64> = (0..d.n()).filter(|&k| leaves[k] == leaves[i]).map(|k| d.target(k)).collect();
        let mean = mates.iter().sum::<f64>() / mates.len() as f64;
        assert!((tree.predict(d.row(i)).unwrap() - mean).abs() <= 1e-12);
    }
}

#[test]
fn boundary_points_go_left() {
    let d = line(&[0.1, 0.2, 0.3, 0.4], &[0.0, 0.0, 1.0, 1.0]);
    let tree = fit_tree(&d, &axis_candidates(&d), &FitConfig::strict(1), &mut rng::stream(0, 0)).unwrap();
    assert_eq!(tree.predict(&[0.2]).unwrap(), 0.0);
    assert!(tree.predict(&[1.0, 1.0]).is_err());
}

#[test]
fn extracted_splits_reproduce_the_fit() {
    for seed in 0..10 {
        let d = common::noisy_continuous(40, 5, 20 + seed);
        let config = FitConfig::strict(3);
        let tree = fit_tree(&d, &random_candidates(&d, 10, 3, seed), &config, &mut rng::stream(seed, 0)).unwrap();
        let splits = tree.extract_splits();
        let refit = fit_tree(&d, &CandidateSet::from_splits(&splits), &config, &mut rng::stream(seed, 1)).unwrap();
        assert_eq!(refit.training_sse(&d), tree.training_sse(&d));
    }
}

#[test]
fn depth_one_extracts_one_split() {
    let d = common::noisy_continuous(20, 2, 5);
    let tree = fit_tree(&d, &axis_candidates(&d), &FitConfig::strict(1), &mut rng::stream(5, 0)).unwrap();
    assert_eq!(tree.extract_splits().len(), 1);
}

#[test]
fn sample_equivalence_cases() {
    let rows = vec![vec![0.1, 0.2], vec![0.2, 0.1], vec![0.8, 0.9], vec![0.9, 0.8]];
    let d = Dataset::from_rows(&rows, vec![0.0, 0.3, 2.0, 2.4], FeatureMode::Continuous).unwrap();
    let fit_on = |split: ObliqueSplit| {
        let mut set = CandidateSet::new();
        set.insert(split);
        fit_tree(&d, &set, &FitConfig::strict(1), &mut rng::stream(0, 0)).unwrap()
    };
    let a = fit_on(ObliqueSplit::new(WeightVector::basis(2, 0).unwrap(), 0.5).unwrap());
    let b = fit_on(ObliqueSplit::new(WeightVector::basis(2, 1).unwrap(), 0.5).unwrap());
    let c = fit_on(ObliqueSplit::new(WeightVector::basis(2, 0).unwrap(), 0.15).unwrap());
    assert!(sample_equivalent(&a, &a, &d).unwrap());
    assert!(sample_equivalent(&a, &b, &d).unwrap());
    assert!(!sample_equivalent(&a, &c, &d).unwrap());
    let deeper = fit_tree(&d, &axis_candidates(&d), &FitConfig::strict(2), &mut rng::stream(0, 0)).unwrap();
    assert!(sample_equivalent(&a, &deeper, &d).is_err());
}

#[test]
fn json_round_trip_preserves_predictions() {
    let d = common::noisy_continuous(40, 3, 6);
    let tree = fit_tree(&d, &random_candidates(&d, 6, 3, 6), &FitConfig::constrained(3, 3, 6), &mut rng::stream(6, 0)).unwrap();
    let back = ObliqueTree::from_json(tree.to_json()).unwrap();
    assert_eq!(tree.predict_dataset(&d).unwrap(), back.predict_dataset(&d).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn children_never_increase_sse(seed in 0u64..1000, n in 1usize..40, depth in 1usize..4, strict in any::<bool>()) {
        let d = common::noisy_continuous(n, 3, seed);
        let config = if strict { FitConfig::strict(depth) } else { FitConfig::constrained(depth, 2, 4) };
        let tree = fit_tree(&d, &random_candidates(&d, 4, 2, seed), &config, &mut rng::stream(seed, 0)).unwrap();
        let targets = |rows: &[usize]| rows.iter().map(|&i| d.target(i)).collect::<Vec<_>>();
        for node in tree.nodes() {
            if let (Some(l), Some(r)) = (node.left, node.right) {
                let parent = common::sse(&targets(&node.node_rows));
                let children = common::sse(&targets(&tree.nodes()[l].node_rows)) + common::sse(&targets(&tree.nodes()[r].node_rows));
                prop_assert!(children <= parent + 1e-9);
            }
        }
        if strict {
            prop_assert_eq!(tree.n_leaves(), 1 << depth);
        }
    }

    #[test]
    fn fitting_is_deterministic(seed in 0u64..1000) {
        let d = common::noisy_continuous(30, 4, seed);
        let set = random_candidates(&d, 5, 3, seed);
        let a = fit_tree(&d, &set, &FitConfig::strict(2), &mut rng::stream(seed, 0)).unwrap();
        let b = fit_tree(&d, &set, &FitConfig::strict(2), &mut rng::stream(seed, 0)).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn every_point_reaches_one_leaf(seed in 0u64..1000, x in proptest::collection::vec(-0.5f64..1.5, 3)) {
        let d = common::noisy_continuous(25, 3, seed);
        let tree = fit_tree(&d, &random_candidates(&d, 5, 2, seed), &FitConfig::strict(3), &mut rng::stream(seed, 0)).unwrap();
        let leaf = route(&tree, &x);
        prop_assert!(tree.nodes()[leaf].is_leaf());
        prop_assert_eq!(tree.predict(&x).unwrap(), tree.nodes()[leaf].leaf_value);
    }
}
