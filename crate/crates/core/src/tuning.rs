//! Uniform random search with a single held-out validation split.
//!
//! One 80/20 split is drawn per search and reused by every round. Round `k`
//! gets its own stream: it first draws the model seed, then one value per
//! dimension in declaration order. Spaces that share a prefix of dimensions
//! therefore propose identical values for that prefix in every round.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::experiments::r2_score;
use crate::forests::{FrcParams, RfParams};
use crate::rng;

/// Sampled hyperparameters keyed by dimension name.
pub type Params = Map<String, Value>;

/// Fraction of rows used for fitting during the search.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    /// Integers in `lo..=hi`.
    IntRange { lo: i64, hi: i64 },
    /// Reals in `[lo, hi)`, or exactly `lo` when the bounds coincide.
    RealUniform { lo: f64, hi: f64 },
    /// One of the listed JSON values.
    Choice(Vec<Value>),
}

impl Dimension {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Dimension::IntRange { lo, hi } => lo <= hi,
            Dimension::RealUniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Dimension::Choice(values) => !values.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("dimension {name:?} is empty")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match self {
            Dimension::IntRange { lo, hi } => Value::from(rng.random_range(*lo..=*hi)),
            Dimension::RealUniform { lo, hi } => {
                if lo == hi {
                    Value::from(*lo)
                } else {
                    Value::from(rng.random_range(*lo..*hi))
                }
            }
            Dimension::Choice(values) => values[rng.random_range(0..values.len())].clone(),
        }
    }

    /// Whether `value` could have been drawn from this dimension.
    pub fn contains(&self, value: &Value) -> bool {
        match self {
            Dimension::IntRange { lo, hi } => value.as_i64().is_some_and(|v| (*lo..=*hi).contains(&v)),
            Dimension::RealUniform { lo, hi } => {
                value.as_f64().is_some_and(|v| if lo == hi { v == *lo } else { *lo <= v && v < *hi })
            }
            Dimension::Choice(values) => values.contains(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedDimension {
    pub name: String,
    #[serde(flatten)]
    pub dimension: Dimension,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSpace {
    pub dimensions: Vec<NamedDimension>,
}

impl ParamSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, dimension: Dimension) -> Self {
        self.dimensions.push(NamedDimension { name: name.to_string(), dimension });
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (k, d) in self.dimensions.iter().enumerate() {
            d.dimension.validate(&d.name)?;
            if self.dimensions[..k].iter().any(|e| e.name == d.name) {
                return Err(Error::InvalidConfig(format!("dimension {:?} declared twice", d.name)));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Params {
        self.dimensions.iter().map(|d| (d.name.clone(), d.dimension.sample(rng))).collect()
    }

    pub fn contains(&self, params: &Params) -> bool {
        params.len() == self.dimensions.len()
            && self.dimensions.iter().all(|d| params.get(&d.name).is_some_and(|v| d.dimension.contains(v)))
    }
}

fn ints(values: impl IntoIterator<Item = i64>) -> Dimension {
    Dimension::Choice(values.into_iter().map(Value::from).collect())
}

fn shared_tree_dimensions(space: ParamSpace) -> ParamSpace {
    space
        .with("min_samples_split", Dimension::IntRange { lo: 1, hi: 20 })
        .with("min_samples_leaf", Dimension::IntRange { lo: 2, hi: 20 })
        .with("min_impurity_decrease", Dimension::Choice(vec![0.0.into(), 0.01.into(), 0.02.into(), 0.05.into()]))
        .with(
            "max_depth",
            Dimension::Choice(vec![5.into(), 10.into(), 20.into(), 50.into(), Value::Null]),
        )
}

/// Random forest space: column fraction, sample minima, impurity threshold, depth.
pub fn rf_space() -> ParamSpace {
    shared_tree_dimensions(ParamSpace::new().with("gamma", Dimension::RealUniform { lo: 0.0, hi: 1.0 }))
}

/// [`rf_space`] plus the number `h` of split levels used for augmentation.
pub fn rf_plus_s_space(max_h: usize) -> ParamSpace {
    rf_space().with("h", ints(0..=max_h as i64))
}

/// Forest-RC space; `null` in `feature_combinations` means all `p` features.
pub fn frc_space() -> ParamSpace {
    shared_tree_dimensions(ParamSpace::new())
        .with("bootstrap", Dimension::Choice(vec![true.into(), false.into()]))
        .with("feature_combinations", {
            let mut values: Vec<Value> = (1..=10).map(Value::from).collect();
            values.push(20.into());
            values.push(Value::Null);
            Dimension::Choice(values)
        })
}

/// Overlays `params` on `base`; keys unknown to [`RfParams`] are ignored.
pub fn rf_params(base: &RfParams, params: &Params) -> Result<RfParams> {
    let mut doc = serde_json::to_value(base)?;
    let obj = doc.as_object_mut().expect("struct serializes to an object");
    for (k, v) in params {
        if obj.contains_key(k) {
            obj.insert(k.clone(), v.clone());
        }
    }
    let out: RfParams = serde_json::from_value(doc)?;
    out.validate()?;
    Ok(out)
}

/// Overlays `params` on `base`, reading a `null` feature count as `p`.
pub fn frc_params(base: &FrcParams, params: &Params, p: usize) -> Result<FrcParams> {
    let mut out = FrcParams { forest: rf_params(&base.forest, params)?, ..base.clone() };
    match params.get("feature_combinations") {
        Some(Value::Null) => out.feature_combinations = p,
        Some(v) => {
            out.feature_combinations = v
                .as_u64()
                .ok_or_else(|| Error::InvalidConfig(format!("feature_combinations {v} is not a count")))?
                as usize
        }
        None => {}
    }
    out.validate(p)?;
    Ok(out)
}

/// Reads `h` from a parameter map, defaulting to 0.
pub fn h_param(params: &Params) -> Result<usize> {
    match params.get("h") {
        None => Ok(0),
        Some(v) => v.as_u64().map(|h| h as usize).ok_or_else(|| Error::InvalidConfig(format!("h {v} is not a count"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub params: Params,
    pub model_seed: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub best_index: usize,
    pub best_params: Params,
    pub best_model_seed: u64,
    pub best_val_score: f64,
    pub rounds: usize,
    pub train_rows: usize,
    pub val_rows: usize,
    pub trials: Vec<TrialRecord>,
}

/// Anything the search can score.
pub trait Predictor {
    fn predict_all(&self, dataset: &Dataset) -> Result<Vec<f64>>;
}

impl<T: crate::forests::Regressor> Predictor for T {
    fn predict_all(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        if dataset.p() != self.width() {
            return Err(Error::DimensionMismatch { expected: self.width(), found: dataset.p() });
        }
        Ok(dataset.rows().map(|x| self.predict_row(x)).collect())
    }
}

/// Runs `rounds` uniformly sampled configurations; the highest validation R²
/// wins, with the earliest round winning ties.
///
/// `build(train, params, model_seed)` fits one model.
pub fn random_search<M, F>(dataset: &Dataset, space: &ParamSpace, rounds: usize, seed: u64, build: F) -> Result<TuneReport>
where
    M: Predictor,
    F: Fn(&Dataset, &Params, u64) -> Result<M> + Sync,
{
    let plan = crate::data::train_val_split(dataset.n(), TRAIN_FRACTION, &mut rng::stream(seed, 0))?;
    let (train, val) = (plan.train(dataset), plan.val(dataset));
    random_search_on(&train, &val, space, rounds, seed, build)
}

/// [`random_search`] over an explicit train/validation pair.
pub fn random_search_on<M, F>(
    train: &Dataset,
    val: &Dataset,
    space: &ParamSpace,
    rounds: usize,
    seed: u64,
    build: F,
) -> Result<TuneReport>
where
    M: Predictor,
    F: Fn(&Dataset, &Params, u64) -> Result<M> + Sync,
{
    if rounds < 1 {
        return Err(Error::InvalidConfig("at least one search round is required".into()));
    }
    space.validate()?;
    let trials = (1..=rounds)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(seed, k as u64);
            let model_seed = rng::child_seed(&mut rng);
            let params = space.sample(&mut rng);
            let attach = |e: Error| Error::Trial { params: Value::Object(params.clone()).to_string(), source: Box::new(e) };
            let model = build(train, &params, model_seed).map_err(attach)?;
            let predictions = model.predict_all(val).map_err(attach)?;
            let score = r2_score(&predictions, val.targets()).map_err(attach)?;
            Ok(TrialRecord { index: k - 1, params, model_seed, score })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = trials
        .iter()
        .fold(&trials[0], |best, t| if t.score > best.score { t } else { best });
    Ok(TuneReport {
        best_index: best.index,
        best_params: best.params.clone(),
        best_model_seed: best.model_seed,
        best_val_score: best.score,
        rounds,
        train_rows: train.n(),
        val_rows: val.n(),
        trials,
    })
}

/// Refits the winning configuration on every row of `dataset`.
pub fn refit_pooled<M, F>(dataset: &Dataset, report: &TuneReport, build: F) -> Result<M>
where
    F: Fn(&Dataset, &Params, u64) -> Result<M>,
{
    build(dataset, &report.best_params, report.best_model_seed)
}
