//! Allocation-only core for learning moral contexts from ternary judgment
//! distributions.
//!
//! Everything in this crate is pure computation over values: no file system,
//! no network, no clock. The companion `cometh` crate carries IO, the LLM
//! gateway, embeddings and the command line.
//!
//! Module map:
//!
//! - [`distributions`]: the ternary outcome space and its divergences.
//! - [`learner`]: the online context learner (adding and merging rules).
//! - [`synthetic`]: canonical distributions and seeded benchmark generation.
//! - [`metrics`]: context-count, penalized EMD, homogeneity, loss, clustering
//!   agreement and alignment scores.
//! - [`gridsearch`]: the threshold sweep, cell by cell.
//! - [`kmeans`]: k-means++ with restarts and silhouette-based `k` selection.
//! - [`generalization`]: the weighted Bernoulli log-likelihood model.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod distributions;
pub mod generalization;
pub mod gridsearch;
pub mod kmeans;
pub mod learner;
pub mod metrics;
pub mod optim;
pub mod seed;
pub mod synthetic;

pub use distributions::{Judgment, JudgmentCounts, JudgmentDistribution};
pub use learner::{Context, LearnerConfig, LearnerState};
