//! Copula-based path attribution for small feed-forward classifiers.
//!
//! A network is trained, every node's activations are mapped through their
//! empirical marginal CDFs, and rank correlations between adjacent layers are
//! composed along input-to-output paths. Paths are ranked by how much their
//! composed score varies across output classes; per-feature averages of that
//! variance are compared against random-forest impurity importances.

pub mod cli;
pub mod dataset;
pub mod depstats;
pub mod error;
pub mod forest;
pub mod neuralnet;
pub mod par;
pub mod pathrank;
pub mod render;

pub use error::{Error, Result};
