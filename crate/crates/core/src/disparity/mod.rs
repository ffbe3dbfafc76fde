//! Benchmark and post-stop disparity analyses plus the outcome test.
//!
//! Builds analysis datasets from standardized records (count cells against
//! census benchmarks, stop-level frames for post-stop outcomes), fits the
//! regression battery through [`crate::glm`], and computes hit-rate tables.

pub mod cells;
pub mod outcome;
pub mod plotdata;
pub mod poststop;

pub use cells::{build_cells, census_key, age_bin, AgeBin, CensusTable, CountCell, CoverageReport};
pub use outcome::{outcome_test, two_type_hit_rates, HitRateRow, OutcomeTestResult};
pub use plotdata::{outcome_rate_points, stop_rate_points, OutcomeRatePoint, RateEvent, StopRatePoint};
pub use poststop::{
    poststop_analysis, stop_rate_analysis, ControlSet, PostStopFit, PostStopOutcome, StopRateResult,
};
