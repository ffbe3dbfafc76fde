//! Statistical toolkit for analyzing racial disparities in traffic-stop records.
//!
//! The crate is organized as a pipeline: [`records`] standardizes heterogeneous
//! per-state stop exports into [`records::StopRecord`]s; [`disparity`] and
//! [`policy`] aggregate those records and fit regressions from [`glm`];
//! [`threshold`] runs the hierarchical Bayesian threshold test on top of the
//! [`inference`] NUTS sampler; [`synth`] generates model-faithful synthetic
//! datasets for recovery testing. [`numerics`] holds the special functions,
//! solvers, and seeded RNG streams everything else is built on.

pub mod disparity;
pub mod error;
pub mod glm;
pub mod inference;
pub mod numerics;
pub mod policy;
pub mod records;
pub mod synth;
pub mod threshold;

pub use error::{Error, Result};
