//! Continual-learning classification over fixed, pretrained feature vectors.
//!
//! Every class is remembered as K independent one-dimensional densities, one
//! per feature dimension, together with the number of training samples it
//! absorbed. Prediction is a factorized Bayes rule: the per-feature
//! log-densities are summed and combined with a count-ratio log-prior.
//! Learning a new class never reads or modifies the memory of an old one, so
//! the final classifier does not depend on how classes were split into
//! rounds or on the order they arrived in.
//!
//! Modules, bottom-up:
//!
//! - [`feature_store`]: labeled feature shards (binary and CSV), L2
//!   normalization and feature subsampling.
//! - [`density`]: 1-D Gaussian mixtures fit by EM and Gaussian KDE.
//! - [`memory`]: per-class memories, the memory bank, data-incremental
//!   updates and the bank file format.
//! - [`classifier`]: log-joint scoring, posteriors and a nearest-class-mean
//!   baseline.
//! - [`protocol`]: class-incremental, few-shot and data-incremental
//!   evaluation runs, sweeps and mean class recall.

pub mod classifier;
pub mod density;
mod error;
pub mod feature_store;
pub mod memory;
pub mod protocol;

pub(crate) mod math;

pub use error::{Error, Result};

pub use classifier::{ClassScores, PriorMode};
pub use density::{DensityModel, EmConfig, GaussianComponent, Gmm1D, Kde1D};
pub use feature_store::{FeatureDataset, FeatureRecord, ShardFormat};
pub use memory::{BandwidthRule, ClassMemory, EstimatorConfig, MemoryBank};
pub use protocol::{EvalReport, ProtocolConfig, ProtocolMode, RoundReport};
