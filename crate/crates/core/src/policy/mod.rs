//! Marijuana-legalization analyses: pre/post trends, the
//! difference-in-difference search model, and supporting counts.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::glm::{fit_logistic, Design, FitResult};
use crate::records::{Race, SearchType, StopRecord};

/// Difference-in-difference specification.
#[derive(Debug, Clone, Serialize)]
pub struct DidSpec {
    pub treated_states: BTreeSet<String>,
    pub control_states: BTreeSet<String>,
    pub legalization_date: NaiveDate,
    pub outcome: DidOutcome,
    /// Searches excluded as procedural rather than discretionary.
    pub excluded_search_types: BTreeSet<SearchType>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DidOutcome {
    Search,
    DrugMisdemeanor,
}

impl DidSpec {
    /// The paper's configuration: Colorado and Washington treated at the end
    /// of 2012, with procedural searches excluded.
    pub fn marijuana(control_states: impl IntoIterator<Item = impl Into<String>>) -> DidSpec {
        DidSpec {
            treated_states: ["CO".to_string(), "WA".to_string()].into(),
            control_states: control_states.into_iter().map(Into::into).collect(),
            legalization_date: NaiveDate::from_ymd_opt(2012, 12, 10).expect("valid date"),
            outcome: DidOutcome::Search,
            excluded_search_types: [SearchType::IncidentToArrest, SearchType::Inventory, SearchType::Warrant]
                .into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.treated_states.is_empty() || self.control_states.is_empty() {
            return Err(Error::validation("need non-empty treated and control state sets".to_string()));
        }
        if !self.treated_states.is_disjoint(&self.control_states) {
            return Err(Error::validation("treated and control states overlap".to_string()));
        }
        Ok(())
    }
}

/// Years (fractional) between the legalization date and the stop.
fn years_since(date: NaiveDate, reference: NaiveDate) -> f64 {
    (date - reference).num_days() as f64 / 365.25
}

/// Search outcome net of procedural searches: a discretionary search happened.
fn discretionary_search(r: &StopRecord, excluded: &BTreeSet<SearchType>) -> Option<bool> {
    let searched = r.search_conducted?;
    if !searched {
        return Some(false);
    }
    // a search whose every recorded type is procedural is excluded; keep
    // searches with no recorded type (nothing marks them procedural)
    if !r.search_types.is_empty() && r.search_types.iter().all(|t| excluded.contains(t)) {
        Some(false)
    } else {
        Some(true)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DidFit {
    pub fit: FitResult,
    pub rows_used: u64,
    /// Stops in treated states during the post period.
    pub treated_post_rows: u64,
}

/// Fit the diff-in-diff search model: state and race fixed effects, a
/// continuous time trend in years since legalization, and race-specific
/// treatment interactions (the α_r of interest, named `treated:<race>` in
/// the fit).
pub fn did_fit(records: &[StopRecord], spec: &DidSpec) -> Result<DidFit> {
    spec.validate()?;

    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    struct Key {
        state: String,
        race: Race,
        // time enters continuously; quantize to days via the date itself
        date: NaiveDate,
        treated_post: bool,
    }

    let mut grouped: BTreeMap<(Key, bool), f64> = BTreeMap::new();
    let mut treated_post_rows = 0u64;
    for r in records {
        let in_treated = spec.treated_states.contains(&r.state);
        if !in_treated && !spec.control_states.contains(&r.state) {
            continue;
        }
        if !matches!(r.driver_race, Race::White | Race::Black | Race::Hispanic) {
            continue;
        }
        let Some(date) = r.stop_date else { continue };
        let y = match spec.outcome {
            DidOutcome::Search => discretionary_search(r, &spec.excluded_search_types),
            DidOutcome::DrugMisdemeanor => Some(r.violations.iter().any(|v| v.contains("possession"))),
        };
        let Some(y) = y else { continue };
        let treated_post = in_treated && date >= spec.legalization_date;
        if treated_post {
            treated_post_rows += 1;
        }
        let key = Key { state: r.state.clone(), race: r.driver_race, date, treated_post };
        *grouped.entry((key, y)).or_insert(0.0) += 1.0;
    }
    if grouped.is_empty() {
        return Err(Error::validation("no usable records in the treated/control states".to_string()));
    }
    if treated_post_rows == 0 {
        return Err(Error::validation(
            "no post-legalization stops in treated states: the treatment indicator is identically zero"
                .to_string(),
        ));
    }
    for state in &spec.treated_states {
        let any_pre = grouped.keys().any(|(k, _)| &k.state == state && !k.treated_post);
        if !any_pre {
            return Err(Error::validation(format!(
                "treated state {state} has no pre-legalization stops"
            )));
        }
    }

    let mut states: Vec<String> = grouped.keys().map(|(k, _)| k.state.clone()).collect();
    states.sort();
    states.dedup();
    let mut races: Vec<&str> = grouped.keys().map(|(k, _)| k.race.as_str()).collect();
    races.sort();
    races.dedup();
    let race_levels: Vec<String> = ["White", "Black", "Hispanic"]
        .iter()
        .filter(|r| races.contains(*r))
        .map(|s| s.to_string())
        .collect();

    let mut b = Design::builder();
    b.factor("state", states);
    b.factor("race", race_levels.clone());
    // race-specific treatment indicators I_r * Z
    let treat_levels: Vec<String> = std::iter::once("none".to_string())
        .chain(race_levels.iter().map(|r| format!("treated:{r}")))
        .collect();
    b.factor("treated", treat_levels);
    b.covariate("years_since_legalization");

    let mut rows_used = 0u64;
    for ((key, y), weight) in &grouped {
        let t = years_since(key.date, spec.legalization_date);
        let treated_level =
            if key.treated_post { format!("treated:{}", key.race.as_str()) } else { "none".to_string() };
        b.push_row(
            &[key.state.as_str(), key.race.as_str(), treated_level.as_str()],
            &[t],
            *y as u8 as f64,
            *weight,
            0.0,
        )?;
        rows_used += *weight as u64;
    }
    let design = b.build()?;
    let fit = fit_logistic(&design)?;
    Ok(DidFit { fit, rows_used, treated_post_rows })
}

/// Quarterly outcome rates per race/state with pre/post linear trends.
#[derive(Debug, Clone, Serialize)]
pub struct TrendPoint {
    pub state: String,
    pub race: Race,
    /// Quarter start date.
    pub quarter: NaiveDate,
    pub stops: u64,
    pub outcomes: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendLine {
    pub state: String,
    pub race: Race,
    pub period: &'static str,
    /// Rate at the legalization date implied by the line.
    pub intercept: f64,
    /// Rate change per year.
    pub slope: f64,
    /// OLS standard error of the slope.
    pub slope_se: f64,
    pub n_quarters: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendSeries {
    pub points: Vec<TrendPoint>,
    pub lines: Vec<TrendLine>,
}

fn quarter_start(d: NaiveDate) -> NaiveDate {
    NaiveDate::from_ymd_opt(d.year(), d.month0() / 3 * 3 + 1, 1).expect("valid quarter start")
}

/// Per-state code sets that count as a drug misdemeanor.
pub fn default_misdemeanor_codes() -> BTreeMap<String, BTreeSet<String>> {
    let mut m = BTreeMap::new();
    m.insert("CO".to_string(), BTreeSet::from(["marijuana_possession".to_string()]));
    m.insert(
        "WA".to_string(),
        BTreeSet::from(["marijuana_possession".to_string(), "drug_possession".to_string()]),
    );
    m
}

/// Quarterly rates per (race, state) with OLS lines fit separately on the
/// pre and post quarters.
pub fn trend_series(
    records: &[StopRecord],
    outcome: DidOutcome,
    spec: &DidSpec,
    misdemeanor_codes: &BTreeMap<String, BTreeSet<String>>,
) -> Result<TrendSeries> {
    let mut counts: BTreeMap<(String, Race, NaiveDate), (u64, u64)> = BTreeMap::new();
    for r in records {
        if !matches!(r.driver_race, Race::White | Race::Black | Race::Hispanic) {
            continue;
        }
        let Some(date) = r.stop_date else { continue };
        let hit = match outcome {
            DidOutcome::Search => match discretionary_search(r, &spec.excluded_search_types) {
                Some(b) => b,
                None => continue,
            },
            DidOutcome::DrugMisdemeanor => match misdemeanor_codes.get(&r.state) {
                Some(codes) => r.violations.iter().any(|v| codes.contains(v)),
                None => r.violations.iter().any(|v| v.contains("possession")),
            },
        };
        let e = counts.entry((r.state.clone(), r.driver_race, quarter_start(date))).or_insert((0, 0));
        e.0 += 1;
        e.1 += hit as u64;
    }

    let mut points = Vec::new();
    for ((state, race, quarter), (stops, outcomes)) in &counts {
        points.push(TrendPoint {
            state: state.clone(),
            race: *race,
            quarter: *quarter,
            stops: *stops,
            outcomes: *outcomes,
            rate: *outcomes as f64 / *stops as f64,
        });
    }

    let mut lines = Vec::new();
    let mut series: BTreeMap<(String, Race), Vec<&TrendPoint>> = BTreeMap::new();
    for p in &points {
        series.entry((p.state.clone(), p.race)).or_default().push(p);
    }
    for ((state, race), pts) in series {
        for (period, keep_post) in [("pre", false), ("post", true)] {
            let sel: Vec<(f64, f64)> = pts
                .iter()
                .filter(|p| (p.quarter >= spec.legalization_date) == keep_post)
                .map(|p| (years_since(p.quarter, spec.legalization_date), p.rate))
                .collect();
            if sel.len() < 2 {
                continue;
            }
            let (intercept, slope, slope_se) = ols_line(&sel);
            lines.push(TrendLine {
                state: state.clone(),
                race,
                period,
                intercept,
                slope,
                slope_se,
                n_quarters: sel.len(),
            });
        }
    }
    Ok(TrendSeries { points, lines })
}

/// Simple OLS of y on x; returns (intercept, slope, slope se).
fn ols_line(xy: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = xy.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = (n - 2.0).max(1.0);
    let rss: f64 = xy.iter().map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let se = (rss / dof / sxx).sqrt();
    (intercept, slope, se)
}

/// Relative change in fruitless searches (no contraband found), comparing the
/// year after legalization to the year before, in the treated states.
pub fn innocent_search_delta(records: &[StopRecord], spec: &DidSpec) -> Result<f64> {
    let start_pre = spec.legalization_date - chrono::Duration::days(365);
    let end_post = spec.legalization_date + chrono::Duration::days(365);
    let mut pre = 0u64;
    let mut post = 0u64;
    let mut have_contraband_field = false;
    for r in records {
        if !spec.treated_states.contains(&r.state) {
            continue;
        }
        let Some(date) = r.stop_date else { continue };
        if r.search_conducted != Some(true) {
            continue;
        }
        let Some(contraband) = r.contraband_found else { continue };
        have_contraband_field = true;
        if contraband {
            continue;
        }
        if date >= start_pre && date < spec.legalization_date {
            pre += 1;
        } else if date >= spec.legalization_date && date < end_post {
            post += 1;
        }
    }
    if !have_contraband_field {
        return Err(Error::validation("records carry no contraband data".to_string()));
    }
    if pre == 0 {
        return Err(Error::validation("no fruitless searches in the year before the cutoff".to_string()));
    }
    Ok(post as f64 / pre as f64 - 1.0)
}
