//! Training feed-forward networks with SGD, classic Rprop and a
//! dropout-aware Rprop, plus bagging/stacking ensembles and an experiment
//! harness for MNIST-style classification.
//!
//! Module map:
//!
//! - [`tensor`], [`rng`]: row-major matrices and the counter-based RNG
//! - [`mlp`]: architecture, forward pass, NLL loss, backpropagation
//! - [`dropout`]: node masks and the derived weight masks
//! - [`optim`]: SGD and the two Rprop kernels
//! - [`ensemble`]: bootstrap resampling, aggregation, stacking
//! - [`mnist`]: IDX parsing/serialization and dataset splits
//! - [`harness`]: training runs, metrics CSV, run comparison
//! - [`stats`]: Wilcoxon signed-rank test
//! - [`checkpoint`]: binary model/optimizer container
//! - [`gradcheck`]: finite-difference gradient checking
//!
//! The `parallel` feature (on by default) runs matrix products, independent
//! runs and ensemble members on rayon; results are identical either way.

pub mod checkpoint;
pub mod dropout;
pub mod ensemble;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod mlp;
pub mod mnist;
pub mod optim;
pub mod par;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
