//! Special functions, SPD solves, and reproducible RNG streams.
//!
//! Everything here is pure and reentrant. The regularized incomplete beta is
//! the workhorse: the threshold-test likelihood needs its value *and* its
//! partial derivatives in the shape parameters, so the continued fraction is
//! evaluated in forward-mode dual arithmetic (see [`special::Dual2`]).

pub mod beta;
pub mod linalg;
pub mod quadrature;
pub mod rng;
pub mod special;

pub use beta::{beta_tail_mean, ln_beta_lower_grad, ln_beta_upper_grad, reg_inc_beta, BetaShape, TailMean};
pub use linalg::solve_spd;
pub use rng::RngState;
