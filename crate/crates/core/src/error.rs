use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path} contains no data rows")]
    EmptyFile { path: PathBuf },

    #[error("row {row}, column {column}: cannot parse {value:?} as a finite real")]
    ParseCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("target column {0:?} not found in header")]
    MissingColumn(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("sparsity {s} is outside 1..={p}")]
    InvalidSparsity { s: usize, p: usize },

    #[error("invalid weight vector: {0}")]
    InvalidWeight(String),

    #[error("finite candidate pool is empty")]
    EmptyPool,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{n} rows cannot be split with train fraction {fraction} into two nonempty parts")]
    TooFewRows { n: usize, fraction: f64 },

    #[error("trees have different depths ({left} vs {right})")]
    DepthMismatch { left: usize, right: usize },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("target variance is zero")]
    ZeroVariance,

    #[error("all methods scored {score} on dataset {dataset:?}")]
    DegenerateScores { dataset: String, score: f64 },

    #[error("outside supported range: {0}")]
    Unsupported(String),

    #[error("value exceeds the representable range")]
    Overflow,

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("trial with params {params} failed: {source}")]
    Trial {
        params: String,
        #[source]
        source: Box<Error>,
    },
}
