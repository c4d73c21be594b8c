//! Progressive refinement of sparse oblique regression trees, with forest
//! baselines, random-search tuning, benchmark drivers and brute-force oracles
//! for small binary instances.

pub mod data;
pub mod error;
pub mod experiments;
pub mod forests;
pub mod oracle;
pub mod progressive;
pub mod rng;
pub mod splitspace;
pub mod tree;
pub mod tuning;

pub use error::{Error, Result};
