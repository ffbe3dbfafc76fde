//! Regression families for the analysis battery: logistic models for
//! post-stop outcomes, and Poisson / quasi-Poisson / negative binomial models
//! (with census offsets) for stop rates, plus robust sandwich errors.

pub mod design;
pub mod fit;

pub use design::{Design, DesignBuilder, Factor, Term};
pub use fit::{
    fit_count, fit_logistic, predict_rate, predict_rate_marginal, sandwich_errors, Family,
    FitResult, Profile,
};
