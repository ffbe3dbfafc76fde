//! Per-location rate tables behind the scatterplot figures.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::disparity::cells::CountCell;
use crate::records::{Outcome, Race, StopRecord};

/// One point of a stops-per-resident scatter: a (race, location) pair.
#[derive(Debug, Clone, Serialize)]
pub struct StopRatePoint {
    pub race: Race,
    pub location: String,
    pub stops: u64,
    pub population: f64,
    /// Stops per person of driving age.
    pub rate: f64,
}

/// Stops per driving-age resident by race and location, aggregated over the
/// demographic and year strata. `min_stops` controls point inclusion (0
/// keeps everything).
pub fn stop_rate_points(cells: &[CountCell], min_stops: u64) -> Vec<StopRatePoint> {
    let mut acc: BTreeMap<(Race, String), (u64, f64)> = BTreeMap::new();
    for c in cells {
        let e = acc.entry((c.race, c.location.clone())).or_insert((0, 0.0));
        e.0 += c.stops;
        e.1 += c.benchmark_pop;
    }
    acc.into_iter()
        .filter(|(_, (stops, pop))| *stops >= min_stops && *pop > 0.0)
        .map(|((race, location), (stops, population))| StopRatePoint {
            race,
            location,
            stops,
            population,
            rate: stops as f64 / population,
        })
        .collect()
}

/// One point of a post-stop outcome scatter.
#[derive(Debug, Clone, Serialize)]
pub struct OutcomeRatePoint {
    pub race: Race,
    pub location: String,
    pub stops: u64,
    pub events: u64,
    pub rate: f64,
}

/// Which per-stop event a rate point counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RateEvent {
    Search,
    Arrest,
}

/// Search or arrest rates among stopped drivers per race and location.
pub fn outcome_rate_points(records: &[StopRecord], event: RateEvent, min_stops: u64) -> Vec<OutcomeRatePoint> {
    let mut acc: BTreeMap<(Race, String), (u64, u64)> = BTreeMap::new();
    for r in records {
        if !matches!(r.driver_race, Race::White | Race::Black | Race::Hispanic) {
            continue;
        }
        let Some(loc) = r.location.as_deref() else { continue };
        let counted = match event {
            RateEvent::Search => match r.search_conducted {
                Some(b) => b,
                None => continue,
            },
            RateEvent::Arrest => match r.outcome {
                Some(o) => o == Outcome::Arrest,
                None => continue,
            },
        };
        let e = acc.entry((r.driver_race, loc.to_string())).or_insert((0, 0));
        e.0 += 1;
        e.1 += counted as u64;
    }
    acc.into_iter()
        .filter(|(_, (stops, _))| *stops >= min_stops)
        .map(|((race, location), (stops, events))| OutcomeRatePoint {
            race,
            location,
            stops,
            events,
            rate: events as f64 / stops as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disparity::cells::AgeBin;
    use crate::records::{Gender, LocationKind};

    #[test]
    fn rates_aggregate_over_strata() {
        let mk = |race, age_bin, stops, pop| CountCell {
            race,
            age_bin,
            gender: Gender::Male,
            location: "A".to_string(),
            year: 2013,
            stops,
            benchmark_pop: pop,
        };
        let cells = vec![
            mk(Race::White, AgeBin::A20to29, 30, 500.0),
            mk(Race::White, AgeBin::A30to39, 20, 500.0),
            mk(Race::Black, AgeBin::A20to29, 40, 400.0),
        ];
        let pts = stop_rate_points(&cells, 0);
        let white = pts.iter().find(|p| p.race == Race::White).unwrap();
        assert_eq!(white.stops, 50);
        assert!((white.rate - 0.05).abs() < 1e-12);
        // inclusion threshold drops sparse points
        assert_eq!(stop_rate_points(&cells, 45).len(), 1);
    }

    #[test]
    fn search_rate_points_count_events() {
        let mk = |race, searched| StopRecord {
            state: "WA".into(),
            stop_date: None,
            stop_time: None,
            location: Some("B".into()),
            location_kind: LocationKind::County,
            driver_race: race,
            driver_gender: Gender::Male,
            driver_age: None,
            violations: vec![],
            stop_purpose: None,
            search_conducted: Some(searched),
            search_types: vec![],
            contraband_found: None,
            outcome: None,
            extras: Default::default(),
        };
        let records = vec![mk(Race::White, true), mk(Race::White, false), mk(Race::Black, false)];
        let pts = outcome_rate_points(&records, RateEvent::Search, 0);
        let white = pts.iter().find(|p| p.race == Race::White).unwrap();
        assert_eq!((white.stops, white.events), (2, 1));
        assert!((white.rate - 0.5).abs() < 1e-12);
    }
}
