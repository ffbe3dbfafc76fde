//! The outcome test: contraband hit rates by race and location.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::records::{Race, StopRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitRateRow {
    pub race: Race,
    /// None for rows aggregated across locations.
    pub location: Option<String>,
    pub searches: u64,
    pub hits: u64,
    /// None when the race/location pair has no searches.
    pub hit_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutcomeTestResult {
    /// Per (race, location) rows for records with a known location.
    pub by_location: Vec<HitRateRow>,
    /// Per-race aggregates over every record with search and contraband data,
    /// including records without a location (the aggregate-only states).
    pub aggregate: Vec<HitRateRow>,
}

/// Hit rates per (race, location) and in aggregate.
///
/// Only records with both `search_conducted` and (for searches)
/// `contraband_found` populated contribute. Location-less records count
/// toward the aggregate only. Pairs with zero searches are emitted with an
/// undefined rate rather than dropped.
pub fn outcome_test(records: &[StopRecord]) -> OutcomeTestResult {
    let mut by_loc: BTreeMap<(Race, String), (u64, u64)> = BTreeMap::new();
    let mut agg: BTreeMap<Race, (u64, u64)> = BTreeMap::new();
    let mut races_seen: std::collections::BTreeSet<Race> = Default::default();
    let mut locations_seen: std::collections::BTreeSet<String> = Default::default();

    for r in records {
        if r.search_conducted != Some(true) {
            continue;
        }
        let Some(hit) = r.contraband_found else { continue };
        races_seen.insert(r.driver_race);
        let a = agg.entry(r.driver_race).or_insert((0, 0));
        a.0 += 1;
        a.1 += hit as u64;
        if let Some(loc) = r.location.as_deref() {
            locations_seen.insert(loc.to_string());
            let e = by_loc.entry((r.driver_race, loc.to_string())).or_insert((0, 0));
            e.0 += 1;
            e.1 += hit as u64;
        }
    }

    let mut by_location = Vec::new();
    for race in &races_seen {
        for loc in &locations_seen {
            let (searches, hits) = by_loc.get(&(*race, loc.clone())).copied().unwrap_or((0, 0));
            by_location.push(HitRateRow {
                race: *race,
                location: Some(loc.clone()),
                searches,
                hits,
                hit_rate: (searches > 0).then(|| hits as f64 / searches as f64),
            });
        }
    }
    let aggregate = races_seen
        .iter()
        .map(|race| {
            let (searches, hits) = agg.get(race).copied().unwrap_or((0, 0));
            HitRateRow {
                race: *race,
                location: None,
                searches,
                hits,
                hit_rate: (searches > 0).then(|| hits as f64 / searches as f64),
            }
        })
        .collect();

    OutcomeTestResult { by_location, aggregate }
}

/// Hit rates implied by a two-point signal mixture under a common threshold.
///
/// Drivers are one of two types with contraband probabilities `p_low` and
/// `p_high`; a fraction `weight_low` are the low type. Searching everyone at
/// or above `threshold` yields hit rate E[p | p ≥ threshold] — the
/// infra-marginality arithmetic behind the worked example where white hit
/// rates exceed black hit rates under an identical threshold.
pub fn two_type_hit_rates(p_low: f64, p_high: f64, weight_low: f64, threshold: f64) -> Result<(f64, f64)> {
    for (name, v) in [("p_low", p_low), ("p_high", p_high), ("weight_low", weight_low), ("threshold", threshold)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!("{name} must be in [0,1], got {v}")));
        }
    }
    let w_high = 1.0 - weight_low;
    let mut searched_mass = 0.0;
    let mut hit_mass = 0.0;
    if p_low >= threshold {
        searched_mass += weight_low;
        hit_mass += weight_low * p_low;
    }
    if p_high >= threshold {
        searched_mass += w_high;
        hit_mass += w_high * p_high;
    }
    if searched_mass == 0.0 {
        return Err(Error::domain("no driver type clears the threshold".to_string()));
    }
    Ok((searched_mass, hit_mass / searched_mass))
}
