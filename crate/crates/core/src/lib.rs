//! Placebo inference on treatment effects when only a handful of large
//! clusters are available.
//!
//! Each cluster contributes one scalar estimate computed from its own data
//! (an OLS intercept, a difference-in-differences slope, a probit constant).
//! The treated-minus-untreated comparison of means is then compared against
//! the distribution of the same statistic under every placebo reassignment
//! of the treatment labels across clusters, optionally rescaled by the
//! two-sample variance so that unbalanced designs remain valid.
//!
//! The crate is `no_std` (it needs `alloc`). The `parallel` feature pulls in
//! `std` and rayon to evaluate large assignment sets and per-cluster fits on
//! a thread pool; results are identical to the sequential path.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod combinations;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod numeric;
pub mod permutation;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    Adjustment, Assignment, Cluster, ClusterDataset, ClusterLayout, EstimateVector, Observation,
    Side, TestConfig, TestResult, Warning,
};
