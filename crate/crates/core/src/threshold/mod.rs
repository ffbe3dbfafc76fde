//! The threshold test: a hierarchical Bayesian model that jointly infers
//! race/location signal distributions and search thresholds from stop, search,
//! and hit counts, with posterior predictive checks and a pre/post
//! policy-change extension.

pub mod data;
pub mod fit;
pub mod model;

pub use data::{prepare, GroupCounts, Period, PrepareOptions, ThresholdData};
pub use fit::{
    aggregate_thresholds, fit, fit_prepost, ppc, FitConfig, GroupThreshold, PpcGroup,
    RaceAggregate, ThresholdFit, RHAT_BOUND,
};
pub use model::{log_posterior, PostShifts, ThresholdModel, ThresholdParams};
