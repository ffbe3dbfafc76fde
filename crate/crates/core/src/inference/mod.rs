//! Gradient-based MCMC: a No-U-Turn sampler with dual-averaging step-size
//! adaptation, multi-chain execution on independent RNG streams, and
//! split-chain convergence diagnostics.

pub mod diagnostics;
pub mod draws;
pub mod model;
pub mod nuts;

pub use diagnostics::{max_rhat, rhat};
pub use draws::{mean_and_interval, quantile_sorted, DrawsMetadata, PosteriorDraws};
pub use model::{validate_gradient, LogDensityModel, Transform};
pub use nuts::{nuts_sample, NutsConfig};
