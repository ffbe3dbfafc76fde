//! Stop-rate and post-stop regression batteries.

use std::collections::BTreeMap;

use chrono::Datelike;
use serde::Serialize;

use crate::disparity::cells::CountCell;
use crate::error::{Error, Result};
use crate::glm::{fit_count, fit_logistic, Design, Family, FitResult};
use crate::records::{Gender, Outcome, Race, SearchType, StopRecord};

/// Post-stop outcomes from the regression battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PostStopOutcome {
    /// Citation (or worse) rather than a warning or no penalty, among stops
    /// for speeding.
    CitationGivenSpeeding,
    Search,
    /// Consent searches; only the states with reliable consent data are used.
    ConsentSearch,
    Arrest,
}

/// States with reliable consent-search data.
pub const CONSENT_SEARCH_STATES: [&str; 7] = ["CO", "FL", "MA", "MD", "NC", "TX", "WA"];

/// Control-variable specifications of the robustness battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ControlSet {
    RaceOnly,
    RaceLocation,
    RaceLocationTime,
    RaceLocationDemo,
    RaceLocationTimeDemo,
}

impl ControlSet {
    pub const ALL: [ControlSet; 5] = [
        ControlSet::RaceOnly,
        ControlSet::RaceLocation,
        ControlSet::RaceLocationTime,
        ControlSet::RaceLocationDemo,
        ControlSet::RaceLocationTimeDemo,
    ];

    fn wants_location(&self) -> bool {
        !matches!(self, ControlSet::RaceOnly)
    }

    fn wants_time(&self) -> bool {
        matches!(self, ControlSet::RaceLocationTime | ControlSet::RaceLocationTimeDemo)
    }

    fn wants_demo(&self) -> bool {
        matches!(self, ControlSet::RaceLocationDemo | ControlSet::RaceLocationTimeDemo)
    }
}

/// Availability bar for including a state in a given specification.
pub const FIELD_AVAILABILITY_BAR: f64 = 0.7;

#[derive(Debug, Clone, Serialize)]
pub struct PostStopFit {
    pub outcome: PostStopOutcome,
    pub controls: ControlSet,
    pub fit: FitResult,
    pub states_used: Vec<String>,
    /// States dropped because a required field falls below the availability
    /// bar, with the offending field.
    pub states_dropped: Vec<(String, String)>,
    pub rows_used: u64,
    pub rows_dropped_missing_fields: u64,
}

fn hour_bin(minute_of_day: u16) -> usize {
    (minute_of_day / 180) as usize
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct RowKey {
    race: Race,
    location: Option<String>,
    year: Option<i32>,
    quarter: Option<u8>,
    weekday: Option<u8>,
    hour: Option<usize>,
    age: Option<crate::disparity::cells::AgeBin>,
    gender: Option<Gender>,
}

fn response_for(outcome: PostStopOutcome, r: &StopRecord) -> Option<bool> {
    match outcome {
        PostStopOutcome::CitationGivenSpeeding => {
            let speeding = r.stop_purpose.as_deref() == Some("speeding")
                || r.violations.iter().any(|v| v == "speeding");
            if !speeding {
                return None;
            }
            r.outcome.map(|o| o >= Outcome::Citation)
        }
        PostStopOutcome::Search => r.search_conducted,
        PostStopOutcome::ConsentSearch => {
            if !CONSENT_SEARCH_STATES.contains(&r.state.as_str()) {
                return None;
            }
            r.search_conducted?;
            Some(r.search_conducted == Some(true) && r.search_types.contains(&SearchType::Consent))
        }
        PostStopOutcome::Arrest => r.outcome.map(|o| o == Outcome::Arrest),
    }
}

/// Fields a specification requires beyond the outcome itself.
fn required_fields(controls: ControlSet) -> Vec<&'static str> {
    let mut fields = vec![];
    if controls.wants_location() {
        fields.push("location");
    }
    if controls.wants_time() {
        fields.extend(["stop_date", "stop_time"]);
    }
    if controls.wants_demo() {
        fields.extend(["driver_age", "driver_gender"]);
    }
    fields
}

fn has_field(r: &StopRecord, field: &str) -> bool {
    match field {
        "location" => r.location.is_some(),
        "stop_date" => r.stop_date.is_some(),
        "stop_time" => r.stop_time.is_some(),
        "driver_age" => r.driver_age.is_some(),
        "driver_gender" => r.driver_gender != Gender::Unknown,
        _ => false,
    }
}

/// Logistic disparity model for one post-stop outcome under one control set.
///
/// States where a required field is available for under 70% of that state's
/// eligible stops are dropped and reported, mirroring the per-analysis state
/// subsets; remaining rows with missing fields are dropped and counted.
pub fn poststop_analysis(
    records: &[StopRecord],
    outcome: PostStopOutcome,
    controls: ControlSet,
) -> Result<PostStopFit> {
    // eligible rows: analysis races with a defined response
    let eligible: Vec<(&StopRecord, bool)> = records
        .iter()
        .filter(|r| matches!(r.driver_race, Race::White | Race::Black | Race::Hispanic))
        .filter_map(|r| response_for(outcome, r).map(|y| (r, y)))
        .collect();
    if eligible.is_empty() {
        return Err(Error::validation(format!("no records with a defined {outcome:?} response")));
    }

    // state-level availability gate
    let fields = required_fields(controls);
    let mut per_state: BTreeMap<&str, (u64, BTreeMap<&str, u64>)> = BTreeMap::new();
    for (r, _) in &eligible {
        let entry = per_state.entry(r.state.as_str()).or_default();
        entry.0 += 1;
        for f in &fields {
            if has_field(r, f) {
                *entry.1.entry(f).or_insert(0) += 1;
            }
        }
    }
    let mut states_used = Vec::new();
    let mut states_dropped = Vec::new();
    for (state, (total, avail)) in &per_state {
        let mut ok = true;
        for f in &fields {
            let frac = avail.get(f).copied().unwrap_or(0) as f64 / *total as f64;
            if frac < FIELD_AVAILABILITY_BAR {
                states_dropped.push((state.to_string(), f.to_string()));
                ok = false;
                break;
            }
        }
        if ok {
            states_used.push(state.to_string());
        }
    }
    if states_used.is_empty() {
        return Err(Error::validation(format!(
            "every state lacks a field required by {controls:?}: {states_dropped:?}"
        )));
    }

    // aggregate rows with identical covariates
    let mut dropped_rows = 0u64;
    let mut grouped: BTreeMap<(RowKey, bool), f64> = BTreeMap::new();
    for (r, y) in &eligible {
        if !states_used.contains(&r.state) {
            continue;
        }
        if fields.iter().any(|f| !has_field(r, f)) {
            dropped_rows += 1;
            continue;
        }
        let key = RowKey {
            race: r.driver_race,
            location: controls.wants_location().then(|| r.location.clone().unwrap()),
            year: controls.wants_time().then(|| r.year().unwrap()),
            quarter: controls.wants_time().then(|| (r.stop_date.unwrap().month0() / 3) as u8),
            weekday: controls
                .wants_time()
                .then(|| r.stop_date.unwrap().weekday().num_days_from_monday() as u8),
            hour: controls.wants_time().then(|| hour_bin(r.stop_time.unwrap())),
            age: controls.wants_demo().then(|| crate::disparity::cells::age_bin(r.driver_age.unwrap())),
            gender: controls.wants_demo().then_some(r.driver_gender),
        };
        *grouped.entry((key, *y)).or_insert(0.0) += 1.0;
    }
    if grouped.is_empty() {
        return Err(Error::validation("no usable rows after the availability gate".to_string()));
    }

    // level sets are restricted to observed levels (plus the reference), and
    // factors with no remaining contrast are dropped entirely
    let distinct = |f: &dyn Fn(&RowKey) -> Option<String>| -> Vec<String> {
        let mut v: Vec<String> = grouped.keys().filter_map(|(k, _)| f(k)).collect();
        v.sort();
        v.dedup();
        v
    };
    let spec = [
        ("race", canonical_or_observed(&RACE_LEVELS, &distinct(&|k: &RowKey| Some(k.race.as_str().to_string())))),
        ("location", distinct(&|k: &RowKey| k.location.clone())),
        ("year", distinct(&|k: &RowKey| k.year.map(|y| y.to_string()))),
        ("quarter", canonical_or_observed(&QUARTER_LEVELS, &distinct(&|k: &RowKey| k.quarter.map(|q| format!("Q{}", q + 1))))),
        ("weekday", canonical_or_observed(&WEEKDAY_LEVELS, &distinct(&|k: &RowKey| k.weekday.map(|w| WEEKDAY_LEVELS[w as usize].to_string())))),
        ("hour", canonical_or_observed(&HOUR_LEVELS, &distinct(&|k: &RowKey| k.hour.map(|h| HOUR_LEVELS[h].to_string())))),
        ("age", canonical_or_observed(&AGE_LEVELS, &distinct(&|k: &RowKey| k.age.map(|a| a.as_str().to_string())))),
        ("gender", canonical_or_observed(&GENDER_LEVELS, &distinct(&|k: &RowKey| k.gender.map(|g| g.as_str().to_string())))),
    ];

    let mut b = Design::builder();
    let mut used_factors: Vec<&str> = Vec::new();
    for (name, levels) in &spec {
        if levels.len() >= 2 {
            b.factor(*name, levels.clone());
            used_factors.push(name);
        }
    }

    let mut rows_used = 0u64;
    for ((key, y), weight) in &grouped {
        let levels = key_levels(key, &used_factors);
        let refs: Vec<&str> = levels.iter().map(String::as_str).collect();
        b.push_row(&refs, &[], *y as u8 as f64, *weight, 0.0)?;
        rows_used += *weight as u64;
    }
    let design = b.build()?;
    let fit = fit_logistic(&design)?;

    Ok(PostStopFit {
        outcome,
        controls,
        fit,
        states_used,
        states_dropped,
        rows_used,
        rows_dropped_missing_fields: dropped_rows,
    })
}

const RACE_LEVELS: [&str; 3] = ["White", "Black", "Hispanic"];
const QUARTER_LEVELS: [&str; 4] = ["Q1", "Q2", "Q3", "Q4"];
const WEEKDAY_LEVELS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];
const HOUR_LEVELS: [&str; 8] =
    ["00-03", "03-06", "06-09", "09-12", "12-15", "15-18", "18-21", "21-24"];
const AGE_LEVELS: [&str; 5] = ["16-19", "20-29", "30-39", "40-49", "50+"];
const GENDER_LEVELS: [&str; 3] = ["Female", "Male", "Unknown"];

/// Observed levels in canonical order; the first observed level becomes the
/// reference. Unobserved levels (including an unobserved canonical reference)
/// would make the design rank deficient and are excluded.
fn canonical_or_observed(canonical: &[&str], observed: &[String]) -> Vec<String> {
    canonical
        .iter()
        .filter(|l| observed.iter().any(|o| o == **l))
        .map(|l| l.to_string())
        .collect()
}

fn key_levels(key: &RowKey, used_factors: &[&str]) -> Vec<String> {
    let mut levels = Vec::with_capacity(used_factors.len());
    for name in used_factors {
        let level = match *name {
            "race" => key.race.as_str().to_string(),
            "location" => key.location.clone().expect("location factor implies location keys"),
            "year" => key.year.expect("year factor implies year keys").to_string(),
            "quarter" => format!("Q{}", key.quarter.expect("quarter key") + 1),
            "weekday" => WEEKDAY_LEVELS[key.weekday.expect("weekday key") as usize].to_string(),
            "hour" => HOUR_LEVELS[key.hour.expect("hour key")].to_string(),
            "age" => key.age.expect("age key").as_str().to_string(),
            "gender" => key.gender.expect("gender key").as_str().to_string(),
            other => unreachable!("unknown factor {other}"),
        };
        levels.push(level);
    }
    levels
}

#[derive(Debug, Clone, Serialize)]
pub struct StopRateResult {
    pub family: Family,
    pub fit: FitResult,
    pub cells_used: usize,
    /// Cells dropped for zero benchmark population, by (location, year).
    pub zero_population_cells: Vec<(String, i32)>,
}

/// Stop-rate regression: counts against the census benchmark with race, age,
/// gender, location, and year controls.
pub fn stop_rate_analysis(cells: &[CountCell], family: Family) -> Result<StopRateResult> {
    if family == Family::Logistic {
        return Err(Error::validation("stop rates use count families".to_string()));
    }
    let mut zero_pop = Vec::new();
    let usable: Vec<&CountCell> = cells
        .iter()
        .filter(|c| {
            if c.benchmark_pop <= 0.0 {
                zero_pop.push((c.location.clone(), c.year));
                false
            } else {
                matches!(c.race, Race::White | Race::Black | Race::Hispanic)
            }
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::validation("no cells with positive benchmark population".to_string()));
    }

    let distinct = |f: &dyn Fn(&CountCell) -> String| -> Vec<String> {
        let mut v: Vec<String> = usable.iter().map(|c| f(c)).collect();
        v.sort();
        v.dedup();
        v
    };
    let spec = [
        ("race", canonical_or_observed(&RACE_LEVELS, &distinct(&|c: &CountCell| c.race.as_str().to_string()))),
        ("age", canonical_or_observed(&AGE_LEVELS, &distinct(&|c: &CountCell| c.age_bin.as_str().to_string()))),
        (
            "gender",
            canonical_or_observed(&GENDER_LEVELS, &distinct(&|c: &CountCell| c.gender.as_str().to_string())),
        ),
        ("location", distinct(&|c: &CountCell| c.location.clone())),
        ("year", distinct(&|c: &CountCell| c.year.to_string())),
    ];

    let mut b = Design::builder();
    let mut used_factors: Vec<&str> = Vec::new();
    for (name, levels) in &spec {
        if levels.len() >= 2 {
            b.factor(*name, levels.clone());
            used_factors.push(name);
        }
    }
    b.with_offset();

    for c in &usable {
        let mut levels = Vec::with_capacity(used_factors.len());
        for name in &used_factors {
            levels.push(match *name {
                "race" => c.race.as_str().to_string(),
                "age" => c.age_bin.as_str().to_string(),
                "gender" => c.gender.as_str().to_string(),
                "location" => c.location.clone(),
                "year" => c.year.to_string(),
                other => unreachable!("unknown factor {other}"),
            });
        }
        let refs: Vec<&str> = levels.iter().map(String::as_str).collect();
        b.push_row(&refs, &[], c.stops as f64, 1.0, c.benchmark_pop.ln())?;
    }
    let design = b.build()?;
    let fit = fit_count(&design, family)?;
    Ok(StopRateResult { family, fit, cells_used: usable.len(), zero_population_cells: zero_pop })
}
