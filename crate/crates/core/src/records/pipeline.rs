//! The standardization pipeline: parse → normalize → dedupe → reclassify,
//! with conservation accounting across every stage.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::normalize::{bump, normalize_record, parse_source, NormalizeOutcome, RowOutcome, RuleCounters};
use crate::records::schema::{RefTables, StandardField, StateSchema, SurnameTable};
use crate::records::types::{DedupKey, Race, StopRecord};

/// One rejected input line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SinkEntry {
    pub line: u64,
    pub reason: String,
}

/// Counts for every rule applied while standardizing one input.
///
/// Conservation: `input_rows = output_records + error_rows + duplicates_removed`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Audit {
    pub state: String,
    pub input_rows: u64,
    pub output_records: u64,
    pub error_rows: u64,
    pub duplicates_removed: u64,
    pub hispanic_relabeled: u64,
    pub rule_counters: BTreeMap<String, u64>,
    pub error_sink: Vec<SinkEntry>,
}

impl Audit {
    pub fn conservation_holds(&self) -> bool {
        self.input_rows == self.output_records + self.error_rows + self.duplicates_removed
    }
}

/// Resolve a dedup key field to its value for a record ("" when missing).
fn key_component(rec: &StopRecord, field: &str) -> String {
    if let Some(std_field) = StandardField::parse(field) {
        match std_field {
            StandardField::StopDate => rec.stop_date.map(|d| d.to_string()).unwrap_or_default(),
            StandardField::StopTime => rec.stop_time.map(|t| t.to_string()).unwrap_or_default(),
            StandardField::Location => rec.location.clone().unwrap_or_default(),
            StandardField::Race => rec.driver_race.as_str().to_string(),
            StandardField::Gender => rec.driver_gender.as_str().to_string(),
            StandardField::Age => rec.driver_age.map(|a| a.to_string()).unwrap_or_default(),
            StandardField::Violations => rec.violations.join("|"),
            StandardField::StopPurpose => rec.stop_purpose.clone().unwrap_or_default(),
            StandardField::SearchConducted => {
                rec.search_conducted.map(|b| b.to_string()).unwrap_or_default()
            }
            StandardField::SearchTypes => {
                rec.search_types.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("|")
            }
            StandardField::ContrabandFound => {
                rec.contraband_found.map(|b| b.to_string()).unwrap_or_default()
            }
            StandardField::Outcome => rec.outcome.map(|o| o.as_str().to_string()).unwrap_or_default(),
            // birth fields only exist pre-normalization; fall through to extras
            StandardField::Ethnicity | StandardField::BirthYear | StandardField::BirthDate => {
                rec.extras.get(field).cloned().unwrap_or_default()
            }
        }
    } else {
        rec.extras.get(field).cloned().unwrap_or_default()
    }
}

/// Merge a group of duplicate rows field-wise: the first non-missing value
/// wins (rows are in source order); list fields take the ordered union.
fn merge_group(group: Vec<StopRecord>) -> StopRecord {
    let mut iter = group.into_iter();
    let mut merged = iter.next().expect("groups are non-empty");
    for rec in iter {
        if merged.stop_date.is_none() {
            merged.stop_date = rec.stop_date;
        }
        if merged.stop_time.is_none() {
            merged.stop_time = rec.stop_time;
        }
        if merged.location.is_none() {
            merged.location = rec.location;
        }
        if merged.driver_race == Race::Unknown {
            merged.driver_race = rec.driver_race;
        }
        if merged.driver_gender == crate::records::types::Gender::Unknown {
            merged.driver_gender = rec.driver_gender;
        }
        if merged.driver_age.is_none() {
            merged.driver_age = rec.driver_age;
        }
        for v in rec.violations {
            if !merged.violations.contains(&v) {
                merged.violations.push(v);
            }
        }
        if merged.stop_purpose.is_none() {
            merged.stop_purpose = rec.stop_purpose;
        }
        if merged.search_conducted.is_none() {
            merged.search_conducted = rec.search_conducted;
        }
        for s in rec.search_types {
            if !merged.search_types.contains(&s) {
                merged.search_types.push(s);
            }
        }
        if merged.contraband_found.is_none() {
            merged.contraband_found = rec.contraband_found;
        }
        if merged.outcome.is_none() {
            merged.outcome = rec.outcome;
        }
        for (k, v) in rec.extras {
            merged.extras.entry(k).or_insert(v);
        }
    }
    merged
}

/// Collapse duplicate rows (equal on every key field) to one merged record.
///
/// Output preserves first-occurrence order; the removed-row count is returned
/// alongside.
pub fn dedupe(records: Vec<StopRecord>, key: &DedupKey) -> (Vec<StopRecord>, u64) {
    let mut order: Vec<Vec<StopRecord>> = Vec::new();
    let mut index: HashMap<Vec<String>, usize> = HashMap::new();
    let input_len = records.len() as u64;

    for rec in records {
        let k: Vec<String> = key.column_names.iter().map(|f| key_component(&rec, f)).collect();
        match index.get(&k) {
            Some(&i) => order[i].push(rec),
            None => {
                index.insert(k, order.len());
                order.push(vec![rec]);
            }
        }
    }

    let out: Vec<StopRecord> = order.into_iter().map(merge_group).collect();
    let removed = input_len - out.len() as u64;
    (out, removed)
}

/// Strip punctuation and generational suffixes, then keep the longest word.
pub fn clean_surname(raw: &str) -> Option<String> {
    const SUFFIXES: [&str; 7] = ["JR", "SR", "II", "III", "IV", "V", "ESQ"];
    let upper = raw.to_uppercase();
    let cleaned: String = upper
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !SUFFIXES.contains(w))
        .max_by_key(|w| w.len())
        .map(|w| w.to_string())
}

/// Fraction of name-holders that must identify as Hispanic for a surname to
/// count as Hispanic-affiliated.
pub const HISPANIC_AFFILIATION_CUTOFF: f64 = 0.75;

/// In the configured states, relabel drivers with Hispanic-affiliated
/// surnames as Hispanic when their recorded race is White or missing.
///
/// Returns the relabel count. Records outside the state set, without a
/// surname, or recorded as any other race are never touched.
pub fn reclassify_hispanic(
    records: &mut [StopRecord],
    surnames: &SurnameTable,
    states: &BTreeSet<String>,
) -> Result<u64> {
    if states.is_empty() {
        return Ok(0);
    }
    if surnames.is_empty() {
        return Err(Error::validation(
            "surname reclassification requested but the surname table is empty".to_string(),
        ));
    }
    let mut relabeled = 0;
    for rec in records.iter_mut() {
        if !states.contains(&rec.state) {
            continue;
        }
        if rec.driver_race != Race::White && rec.driver_race != Race::Unknown {
            continue;
        }
        let Some(raw) = rec.extras.get("surname") else { continue };
        let Some(cleaned) = clean_surname(raw) else { continue };
        if let Some(pct) = surnames.get(&cleaned) {
            if pct >= HISPANIC_AFFILIATION_CUTOFF {
                rec.driver_race = Race::Hispanic;
                relabeled += 1;
            }
        }
    }
    Ok(relabeled)
}

/// Analysis window and race restriction used by every downstream analysis.
pub fn filter_analysis_set(records: &[StopRecord]) -> Vec<StopRecord> {
    records
        .iter()
        .filter(|r| {
            matches!(r.year(), Some(y) if (2011..=2015).contains(&y))
                && matches!(r.driver_race, Race::White | Race::Black | Race::Hispanic)
        })
        .cloned()
        .collect()
}

/// Run the whole standardization pipeline for one state export.
pub fn run_pipeline<R: Read>(
    input: R,
    schema: &StateSchema,
    tables: &RefTables,
    surnames: Option<&SurnameTable>,
    reclassify_states: &BTreeSet<String>,
) -> Result<(Vec<StopRecord>, Audit)> {
    let mut audit = Audit { state: schema.state.clone(), ..Default::default() };
    let mut counters = RuleCounters::new();

    let mut records = Vec::new();
    for outcome in parse_source(input, schema)? {
        audit.input_rows += 1;
        match outcome {
            RowOutcome::Row(raw) => match normalize_record(&raw, schema, tables, &mut counters) {
                NormalizeOutcome::Record(rec) => records.push(*rec),
                NormalizeOutcome::Reject { line, reason } => {
                    audit.error_rows += 1;
                    audit.error_sink.push(SinkEntry { line, reason });
                }
            },
            RowOutcome::Malformed { line, reason } => {
                audit.error_rows += 1;
                audit.error_sink.push(SinkEntry { line, reason });
            }
        }
    }

    let (mut records, removed) = match &schema.dedup_key {
        Some(key) => dedupe(records, key),
        None => (records, 0),
    };
    audit.duplicates_removed = removed;

    // the field-wise union can pair contraband=true with a first-wins
    // search=false; re-apply the consistency rule to merged records
    for rec in records.iter_mut() {
        if rec.contraband_found == Some(true) && rec.search_conducted != Some(true) {
            rec.contraband_found = Some(false);
            bump(&mut counters, "contraband_without_search_set_false");
        }
    }

    if !reclassify_states.is_empty() {
        let surnames = surnames.ok_or_else(|| {
            Error::validation("surname reclassification requested but no surname table supplied".to_string())
        })?;
        audit.hispanic_relabeled = reclassify_hispanic(&mut records, surnames, reclassify_states)?;
    }

    for rec in &records {
        rec.validate()?;
    }

    audit.output_records = records.len() as u64;
    audit.rule_counters = counters;
    debug_assert!(audit.conservation_holds());
    Ok((records, audit))
}
