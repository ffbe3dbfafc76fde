//! Traffic-stop record standardization.
//!
//! Raw per-state exports arrive in idiosyncratic formats; declarative
//! [`schema::StateSchema`] configs map their columns and value vocabularies
//! onto [`StopRecord`]. The pipeline parses (malformed lines go to an error
//! sink with line numbers), normalizes every field, collapses duplicates on
//! the state's dedup key, and optionally reclassifies Hispanic drivers from
//! Census surname data, with an [`Audit`] that conserves row counts exactly.

pub mod io;
pub mod normalize;
pub mod pipeline;
pub mod schema;
pub mod types;

pub use io::{read_standardized, write_standardized, STANDARD_COLUMNS};
pub use normalize::{normalize_record, parse_source, NormalizeOutcome, RowOutcome};
pub use pipeline::{
    clean_surname, dedupe, filter_analysis_set, reclassify_hispanic, run_pipeline, Audit,
    HISPANIC_AFFILIATION_CUTOFF,
};
pub use schema::{RefTables, StandardField, StateSchema, SurnameTable};
pub use types::{
    DedupKey, Gender, LocationKind, Outcome, Race, RawRow, SearchType, StopRecord, SurnameEntry,
};
