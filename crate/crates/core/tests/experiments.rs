mod common;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use progressive_oblique::data::FeatureMode;
use progressive_oblique::experiments::{
    expand_interactions, fit_method, gen_xor, r2_score, rrs, run_benchmark, write_report, BenchConfig, BreimanMethod, DataSpec,
    FittedModel, ForestTuning, MethodEntry, MethodSpec, ProgressiveMethod, SpecEntry, XorSpec,
};
use progressive_oblique::forests::ProjectionLaw;
use progressive_oblique::rng;
use progressive_oblique::splitspace::{CandidateSet, ObliqueSplit, WeightVector};
use progressive_oblique::tree::{fit_tree, FitConfig};
use proptest::prelude::*;
use serde_json::Value;

fn xor(n: usize, p: usize, s0: usize, sigma: f64, seed: u64) -> XorSpec {
    XorSpec { n, p, s0, sigma, seed, test_size: 50 }
}

#[test]
fn one_bit_parity_is_affine() {
    let data = gen_xor(&xor(100, 6, 1, 0.0, 1)).unwrap();
    let u = data.support[0];
    for i in 0..data.train.n() {
        assert_eq!(data.train.target(i), 2.0 * data.train.value(i, u) - 1.0);
    }
}

#[test]
fn noiseless_targets_are_parities() {
    let data = gen_xor(&xor(200, 8, 3, 0.0, 2)).unwrap();
    assert_eq!(data.support.len(), 3);
    for d in [&data.train, &data.test] {
        assert_eq!(d.mode(), FeatureMode::Binary);
        for i in 0..d.n() {
            let ones: usize = data.support.iter().map(|&j| d.value(i, j) as usize).sum();
            let expected = if ones % 2 == 1 { 1.0 } else { -1.0 };
            assert_eq!(d.target(i), expected);
        }
    }
}

#[test]
fn noise_moments() {
    let data = gen_xor(&XorSpec { n: 100_000, p: 5, s0: 2, sigma: 1.0, seed: 3, test_size: 1 }).unwrap();
    let d = &data.train;
    let noise: Vec<f64> = (0..d.n())
        .map(|i| {
            let ones: usize = data.support.iter().map(|&j| d.value(i, j) as usize).sum();
            d.target(i) - if ones % 2 == 1 { 1.0 } else { -1.0 }
        })
        .collect();
    let mean = noise.iter().sum::<f64>() / noise.len() as f64;
    let var = noise.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (noise.len() - 1) as f64;
    assert!(mean.abs() <= 0.02, "{mean}");
    assert!((var - 1.0).abs() <= 0.05, "{var}");
}

#[test]
fn true_support_splits_recover_parity() {
    for s0 in 1..=3 {
        let data = gen_xor(&xor(400, 7, s0, 0.0, 10 + s0 as u64)).unwrap();
        let mut set = CandidateSet::new();
        for &u in &data.support {
            set.insert(ObliqueSplit::new(WeightVector::basis(7, u).unwrap(), 0.0).unwrap());
        }
        let tree = fit_tree(&data.train, &set, &FitConfig::strict(s0), &mut rng::stream(s0 as u64, 0)).unwrap();
        assert_eq!(tree.training_sse(&data.train), 0.0, "s0 = {s0}");
    }
}

#[test]
fn r2_examples() {
    assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
    assert_eq!(r2_score(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    // Var = 2/3, MSE = 5/3.
    assert!((r2_score(&[0.0, 0.0, 0.0], &[0.0, 1.0, 2.0]).unwrap() + 1.5).abs() <= 1e-12);
    assert!(r2_score(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    assert!(r2_score(&[0.0], &[1.0, 2.0]).is_err());
}

fn scores(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(m, s)| (m.to_string(), *s)).collect()
}

#[test]
fn relative_score_examples() {
    let two = rrs("d", &scores(&[("a", 0.2), ("b", 0.8)])).unwrap();
    assert_eq!((two["a"], two["b"]), (0.0, 1.0));
    let three = rrs("d", &scores(&[("a", 0.0), ("b", 0.5), ("c", 1.0)])).unwrap();
    assert_eq!((three["a"], three["b"], three["c"]), (0.0, 0.5, 1.0));
    assert!(rrs("d", &scores(&[("a", 0.4), ("b", 0.4)])).is_err());
    assert!(rrs("d", &scores(&[("a", 0.4)])).is_err());
}

#[test]
fn interaction_widths() {
    for (p, width) in [(3usize, 9usize), (13, 104)] {
        let d = common::noisy_continuous(5, p, p as u64);
        let e = expand_interactions(&d).unwrap();
        assert_eq!(e.p(), width);
        // The (i, i) column for i = 0 directly follows the raw features.
        for i in 0..5 {
            assert_eq!(e.value(i, p), d.value(i, 0) * d.value(i, 0));
        }
    }
    // Square of the last feature is the final column.
    let d = common::noisy_continuous(4, 3, 1);
    let e = expand_interactions(&d).unwrap();
    for i in 0..4 {
        assert_eq!(e.value(i, 8), d.value(i, 2).powi(2));
    }
}

fn small_config(output_dir: &Path) -> BenchConfig {
    let progressive = ProgressiveMethod {
        iterations: 4,
        sparsity: 2,
        subset_size: 10,
        pool_size: None,
        depth: 2,
        min_samples_leaf: 3,
        min_samples_split: 6,
        strict: false,
    };
    BenchConfig {
        seed: 9,
        trials: 3,
        output_dir: output_dir.to_path_buf(),
        methods: vec![
            MethodEntry { name: "prog".into(), method: MethodSpec::Progressive(progressive.clone()) },
            MethodEntry {
                name: "breiman".into(),
                method: MethodSpec::Breiman(BreimanMethod {
                    directions: 10,
                    sparsity: 2,
                    depth: 2,
                    min_samples_leaf: 3,
                    min_samples_split: 6,
                    projection: ProjectionLaw::Uniform,
                }),
            },
            MethodEntry {
                name: "rf".into(),
                method: MethodSpec::RandomForest { tuning: ForestTuning { rounds: 2, tune_trees: 3, final_trees: 4 } },
            },
        ],
        specs: vec![
            SpecEntry { name: "xor-a".into(), data: DataSpec::Xor { n: 60, p: 5, s0: 1, sigma: 0.5, test_size: 40 } },
            SpecEntry { name: "xor-b".into(), data: DataSpec::Xor { n: 50, p: 4, s0: 2, sigma: 0.0, test_size: 40 } },
        ],
    }
}

fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !(k.contains("runtime") || k.contains("elapsed")));
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

fn jsonl_without_timings(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("trials.jsonl"))
        .unwrap()
        .lines()
        .map(|line| {
            let mut v: Value = serde_json::from_str(line).unwrap();
            strip_timings(&mut v);
            v.to_string()
        })
        .collect()
}

#[test]
fn reruns_reproduce_the_trial_log() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let config = small_config(a.path());
    write_report(&run_benchmark(&config).unwrap(), a.path()).unwrap();
    write_report(&run_benchmark(&config).unwrap(), b.path()).unwrap();
    let (la, lb) = (jsonl_without_timings(a.path()), jsonl_without_timings(b.path()));
    assert_eq!(la.len(), 3 * 2 * 3);
    assert_eq!(la, lb);
}

#[test]
fn aggregates_match_the_trial_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    write_report(&run_benchmark(&config).unwrap(), dir.path()).unwrap();

    let mut groups: HashMap<(String, String), Vec<f64>> = HashMap::new();
    for line in fs::read_to_string(dir.path().join("trials.jsonl")).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let key = (v["method"].as_str().unwrap().to_string(), v["spec"].as_str().unwrap().to_string());
        let entry = groups.entry(key).or_default();
        if let Some(r2) = v["r2"].as_f64() {
            entry.push(r2);
        }
    }

    let mut reader = csv::Reader::from_path(dir.path().join("aggregate.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.unwrap();
        let key = (record[col("method")].to_string(), record[col("spec")].to_string());
        let values = &groups[&key];
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt();
        let got_mean: f64 = record[col("mean_r2")].parse().unwrap();
        let got_sd: f64 = record[col("sd_r2")].parse().unwrap();
        assert!((got_mean - mean).abs() <= 1e-12, "{key:?}");
        assert!((got_sd - sd).abs() <= 1e-12, "{key:?}");
        rows += 1;
    }
    assert_eq!(rows, groups.len());
}

#[test]
fn empty_grids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.trials = 0;
    assert!(run_benchmark(&config).is_err());
    let mut config = small_config(dir.path());
    config.methods.clear();
    assert!(run_benchmark(&config).is_err());
    let mut config = small_config(dir.path());
    config.specs.clear();
    assert!(run_benchmark(&config).is_err());
}

#[test]
fn config_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let path = dir.path().join("bench.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    assert_eq!(BenchConfig::from_file(&path).unwrap(), config);
}

#[test]
fn csv_specs_resolve_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("a,b,y\n");
    let mut r = rng::stream(12, 0);
    for _ in 0..40 {
        use rand::Rng;
        let (a, b): (f64, f64) = (r.random_range(0.0..10.0), r.random_range(-3.0..3.0));
        text.push_str(&format!("{a},{b},{}\n", a - b));
    }
    fs::write(dir.path().join("lin.csv"), text).unwrap();
    let mut config = small_config(dir.path());
    config.specs = vec![SpecEntry {
        name: "lin".into(),
        data: DataSpec::Csv { path: "lin.csv".into(), target: Some("y".into()), test_fraction: 0.25, expand: true },
    }];
    let path = dir.path().join("cfg.json");
    fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let loaded = BenchConfig::from_file(&path).unwrap();
    let report = run_benchmark(&loaded).unwrap();
    assert!(report.records.iter().all(|r| r.error.is_none()), "{:?}", report.records);
    assert!(report.rrs.iter().all(|r| (0.0..=1.0).contains(&r.rrs)));
}

#[test]
fn fitted_models_survive_json() {
    let data = gen_xor(&xor(60, 4, 2, 0.1, 8)).unwrap();
    let tuning = ForestTuning { rounds: 2, tune_trees: 3, final_trees: 3 };
    let progressive = ProgressiveMethod {
        iterations: 4,
        sparsity: 2,
        subset_size: 10,
        pool_size: None,
        depth: 2,
        min_samples_leaf: 1,
        min_samples_split: 2,
        strict: false,
    };
    let methods = [
        MethodSpec::Progressive(progressive.clone()),
        MethodSpec::RandomForest { tuning: tuning.clone() },
        MethodSpec::RfPlusS { progressive, tuning: tuning.clone() },
        MethodSpec::ForestRc { tuning, max_features: Some(4), projection: ProjectionLaw::Signs },
    ];
    for method in &methods {
        let fit = fit_method(method, &data.train, 3).unwrap();
        let text = fit.model.to_json().to_string();
        let back = FittedModel::from_json(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.width(), 4);
        let a = fit.model.predict_dataset(&data.test).unwrap();
        let b = back.predict_dataset(&data.test).unwrap();
        assert_eq!(a, b, "{method:?}");
        assert_eq!(fit.tuning.is_some(), !matches!(method, MethodSpec::Progressive(_)));
    }
    assert!(FittedModel::from_json(serde_json::json!({"kind": "svm"})).is_err());
}

proptest! {
    #[test]
    fn r2_ignores_joint_permutations(seed in any::<u64>(), n in 2usize..40) {
        let d = common::noisy_continuous(n, 1, seed);
        let preds: Vec<f64> = d.features().to_vec();
        let targets = d.targets().to_vec();
        prop_assume!(targets.iter().any(|&t| t != targets[0]));
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream(seed, 1));
        let p2: Vec<f64> = order.iter().map(|&i| preds[i]).collect();
        let t2: Vec<f64> = order.iter().map(|&i| targets[i]).collect();
        let a = r2_score(&preds, &targets).unwrap();
        let b = r2_score(&p2, &t2).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn relative_scores_ignore_affine_rescaling(
        values in proptest::collection::vec(-5.0f64..5.0, 2..6),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let base: BTreeMap<String, f64> = values.iter().enumerate().map(|(k, v)| (format!("m{k}"), *v)).collect();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assume!(max - min > 1e-6);
        let moved: BTreeMap<String, f64> = base.iter().map(|(k, v)| (k.clone(), scale * v + shift)).collect();
        let a = rrs("d", &base).unwrap();
        let b = rrs("d", &moved).unwrap();
        for (k, v) in &a {
            prop_assert!((0.0..=1.0).contains(v));
            prop_assert!((v - b[k]).abs() <= 1e-9);
        }
    }
}

