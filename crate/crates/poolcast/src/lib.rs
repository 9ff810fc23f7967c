//! Estimation and evaluation of distributional forecast combinations under
//! proper scoring rules.
//!
//! The library fits a linear opinion pool of simple constituent models
//! (Gaussian AR(1), constant-mean Gaussian ARCH(1)) by maximizing in-sample
//! average scores, either jointly (one stage) or constituents-first
//! (two stage), quantifies parameter uncertainty with GMM sandwich
//! covariances, and measures the sampling variability of out-of-sample
//! forecast performance through Monte Carlo replication and Gaussian
//! parameter-draw harnesses. The `poolcast` binary exposes the batch
//! pipelines; see the crate README for usage.

pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod models;
pub mod normal;
pub mod optim;
pub mod par;
pub mod pool;
pub mod rng;
pub mod scoring;
pub mod series;

pub use error::Error;
