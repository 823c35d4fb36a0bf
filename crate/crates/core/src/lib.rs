//! Kernel two-sample statistics and MMD-driven unsupervised domain adaptation.
//!
//! The crate is organised bottom-up:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`kernel`] | Gaussian / Gaussian-mixture kernels, Gram matrices, median heuristic |
//! | [`mmd`] | Biased and unbiased MMD² estimators, analytic gradients, permutation test |
//! | [`coral`] | Covariance alignment loss and gradient (baseline) |
//! | [`net`] | Feedforward classifier with softmax / cross-entropy and backprop |
//! | [`train`] | Joint classification + discrepancy training loop |
//! | [`bench`] | Multi-method, multi-seed comparison on a synthetic shift |
//! | [`metrics`] | Confusion matrix, per-class P/R/F1, classification report |
//! | [`data`] | Synthetic domain-shift generators and CSV ingestion |
//! | [`checkpoint`] | Versioned model serialization |
//! | [`config`] | Plain-text experiment configuration |
//!
//! All arithmetic is `f64`. Every random draw goes through a seeded ChaCha
//! generator so runs are bitwise reproducible.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod coral;
pub mod data;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod mmd;
pub mod net;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use kernel::{FeatureMatrix, KernelMatrix, KernelSpec};
pub use metrics::{ClassificationReport, ConfusionMatrix};
pub use mmd::{MmdEstimate, PermutationTestResult};
pub use net::{LabeledDataset, MlpModel};
pub use train::{EpochMetrics, ExperimentConfig};
