//! Checkpoint ensembles for small feed-forward networks.
//!
//! One training run records a snapshot of the weights and the validation
//! score after every epoch. From that trace the [`ensemble`] module builds
//! the final predictor in one of five ways:
//!
//! - **MV**: keep the best-scoring snapshot.
//! - **CE**: average the output probabilities of the `k` best snapshots.
//! - **CS**: average the weights of the `k` best snapshots.
//! - **LKS**: average the weights of the best snapshot and up to four epochs
//!   immediately before it.
//! - **RIE**: average the outputs of the MV models of several independently
//!   initialized runs.
//!
//! [`metrics`] and [`stats`] score and compare those predictors, and
//! [`harness`] runs learning-rate sweeps with paired comparisons against MV.
//!
//! The data-parallel loops (ensemble members, bootstrap replicates, sweep
//! cells) go through [`Execution`]. They use rayon when the `parallel`
//! feature is on, and every result is identical in either mode.

pub mod data;
pub mod ensemble;
mod error;
pub mod exec;
pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod nnet;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Execution;
pub use matrix::Matrix;
