//! Threshold-test data preparation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{Race, StopRecord};

/// Pre/post policy period tag for the time-varying extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Period {
    Pre,
    Post,
}

impl Period {
    pub fn as_str(&self) -> &'static str {
        match self {
            Period::Pre => "pre",
            Period::Post => "post",
        }
    }

    pub fn parse(s: &str) -> Option<Period> {
        match s {
            "pre" => Some(Period::Pre),
            "post" => Some(Period::Post),
            _ => None,
        }
    }
}

/// Aggregated counts for one (race, location[, period]) group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub race: String,
    pub location: String,
    pub period: Option<Period>,
    pub stops: u64,
    pub searches: u64,
    pub hits: u64,
}

/// Prepared input of the threshold test: a dense (race × location[{ × period])
/// grid of stop/search/hit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdData {
    /// Canonical race order (subset of White/Black/Hispanic).
    pub races: Vec<String>,
    /// Locations ordered by total stops, descending.
    pub locations: Vec<String>,
    pub has_periods: bool,
    /// Dense grid; every (race, location[, period]) appears exactly once.
    pub groups: Vec<GroupCounts>,
    pub warnings: Vec<String>,
}

const RACE_ORDER: [&str; 3] = ["White", "Black", "Hispanic"];

impl ThresholdData {
    /// Assemble from per-group counts, validating invariants and densifying
    /// the grid with zero-count groups.
    pub fn from_groups(groups: Vec<GroupCounts>) -> Result<ThresholdData> {
        if groups.is_empty() {
            return Err(Error::validation("no threshold groups supplied".to_string()));
        }
        let has_periods = groups[0].period.is_some();
        let mut by_key: BTreeMap<(String, String, Option<Period>), GroupCounts> = BTreeMap::new();
        let mut loc_stops: BTreeMap<String, u64> = BTreeMap::new();
        for g in groups {
            if g.hits > g.searches || g.searches > g.stops {
                return Err(Error::validation(format!(
                    "group ({}, {}) violates hits <= searches <= stops: {}/{}/{}",
                    g.race, g.location, g.hits, g.searches, g.stops
                )));
            }
            if !RACE_ORDER.contains(&g.race.as_str()) {
                return Err(Error::validation(format!(
                    "threshold test races are White/Black/Hispanic, got '{}'",
                    g.race
                )));
            }
            if g.period.is_some() != has_periods {
                return Err(Error::validation(
                    "groups mix period-tagged and untagged rows".to_string(),
                ));
            }
            *loc_stops.entry(g.location.clone()).or_insert(0) += g.stops;
            let key = (g.race.clone(), g.location.clone(), g.period);
            if by_key.insert(key, g).is_some() {
                return Err(Error::validation("duplicate (race, location, period) group".to_string()));
            }
        }

        let races: Vec<String> = RACE_ORDER
            .iter()
            .filter(|r| by_key.keys().any(|(race, _, _)| race == *r))
            .map(|r| r.to_string())
            .collect();
        let mut locations: Vec<(String, u64)> = loc_stops.into_iter().collect();
        locations.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let locations: Vec<String> = locations.into_iter().map(|(l, _)| l).collect();

        let periods: Vec<Option<Period>> =
            if has_periods { vec![Some(Period::Pre), Some(Period::Post)] } else { vec![None] };

        let mut dense = Vec::with_capacity(races.len() * locations.len() * periods.len());
        for race in &races {
            for location in &locations {
                for period in &periods {
                    let key = (race.clone(), location.clone(), *period);
                    dense.push(by_key.remove(&key).unwrap_or_else(|| GroupCounts {
                        race: race.clone(),
                        location: location.clone(),
                        period: *period,
                        stops: 0,
                        searches: 0,
                        hits: 0,
                    }));
                }
            }
        }

        Ok(ThresholdData { races, locations, has_periods, groups: dense, warnings: Vec::new() })
    }

    pub fn race_index(&self, race: &str) -> Option<usize> {
        self.races.iter().position(|r| r == race)
    }

    pub fn location_index(&self, location: &str) -> Option<usize> {
        self.locations.iter().position(|l| l == location)
    }

    /// Total stops per location (across races and periods), in location order.
    pub fn location_stop_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.locations.len()];
        for g in &self.groups {
            if let Some(i) = self.location_index(&g.location) {
                totals[i] += g.stops as f64;
            }
        }
        totals
    }

    /// Counts table CSV: `race,location,period,stops,searches,hits`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["race", "location", "period", "stops", "searches", "hits"])?;
        for g in &self.groups {
            w.write_record(&[
                g.race.clone(),
                g.location.clone(),
                g.period.map(|p| p.as_str().to_string()).unwrap_or_default(),
                g.stops.to_string(),
                g.searches.to_string(),
                g.hits.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<ThresholdData> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = rdr.headers()?.clone();
        let expected = ["race", "location", "period", "stops", "searches", "hits"];
        if headers.iter().ne(expected) {
            return Err(Error::validation(format!(
                "threshold counts file needs columns {expected:?}"
            )));
        }
        let mut groups = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let period = match rec.get(2).unwrap_or("") {
                "" => None,
                s => Some(
                    Period::parse(s)
                        .ok_or_else(|| Error::validation(format!("bad period '{s}'")))?,
                ),
            };
            let parse_count = |i: usize, name: &str| -> Result<u64> {
                rec.get(i)
                    .unwrap_or("")
                    .parse::<u64>()
                    .map_err(|e| Error::validation(format!("bad {name} '{}': {e}", rec.get(i).unwrap_or(""))))
            };
            groups.push(GroupCounts {
                race: rec.get(0).unwrap_or("").to_string(),
                location: rec.get(1).unwrap_or("").to_string(),
                period,
                stops: parse_count(3, "stops")?,
                searches: parse_count(4, "searches")?,
                hits: parse_count(5, "hits")?,
            });
        }
        ThresholdData::from_groups(groups)
    }
}

/// Options for [`prepare`].
#[derive(Debug, Clone)]
pub struct PrepareOptions {
    /// Locations with fewer total stops are dropped.
    pub min_stops: u64,
    /// Keep at most this many locations (the most-stopped ones).
    pub max_locations: usize,
    /// When set, tag each stop pre/post by this cutoff date (stops on or
    /// after the date are post).
    pub period_split: Option<chrono::NaiveDate>,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions { min_stops: 1000, max_locations: 100, period_split: None }
    }
}

/// Aggregate records into threshold-test counts.
///
/// Restricts to White/Black/Hispanic drivers with a known location, drops
/// locations below `min_stops`, keeps the `max_locations` most-stopped
/// locations, and warns when a race has near-zero searches in most locations.
pub fn prepare(records: &[StopRecord], options: &PrepareOptions) -> Result<ThresholdData> {
    let mut loc_totals: BTreeMap<&str, u64> = BTreeMap::new();
    let mut usable = Vec::new();
    for r in records {
        if !matches!(r.driver_race, Race::White | Race::Black | Race::Hispanic) {
            continue;
        }
        let Some(loc) = r.location.as_deref() else { continue };
        if options.period_split.is_some() && r.stop_date.is_none() {
            continue;
        }
        *loc_totals.entry(loc).or_insert(0) += 1;
        usable.push(r);
    }

    let mut kept: Vec<(&str, u64)> =
        loc_totals.into_iter().filter(|(_, n)| *n >= options.min_stops).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.truncate(options.max_locations);
    if kept.len() < 2 {
        return Err(Error::validation(format!(
            "threshold test needs at least 2 qualifying locations, found {} (min_stops = {})",
            kept.len(),
            options.min_stops
        )));
    }
    let kept_set: std::collections::BTreeSet<&str> = kept.iter().map(|(l, _)| *l).collect();

    let mut counts: BTreeMap<(String, String, Option<Period>), (u64, u64, u64)> = BTreeMap::new();
    for r in usable {
        let loc = r.location.as_deref().unwrap();
        if !kept_set.contains(loc) {
            continue;
        }
        let period = options.period_split.map(|split| {
            if r.stop_date.unwrap() >= split {
                Period::Post
            } else {
                Period::Pre
            }
        });
        let key = (r.driver_race.as_str().to_string(), loc.to_string(), period);
        let entry = counts.entry(key).or_insert((0, 0, 0));
        entry.0 += 1;
        if r.search_conducted == Some(true) {
            entry.1 += 1;
            if r.contraband_found == Some(true) {
                entry.2 += 1;
            }
        }
    }

    let groups: Vec<GroupCounts> = counts
        .into_iter()
        .map(|((race, location, period), (stops, searches, hits))| GroupCounts {
            race,
            location,
            period,
            stops,
            searches,
            hits,
        })
        .collect();

    let mut data = ThresholdData::from_groups(groups)?;

    // sparsity warning: a race with under 5 searches in most locations will
    // have weakly identified thresholds
    for race in data.races.clone() {
        let mut sparse = 0usize;
        let mut total = 0usize;
        let mut per_loc: BTreeMap<&str, u64> = BTreeMap::new();
        for g in &data.groups {
            if g.race == race {
                *per_loc.entry(g.location.as_str()).or_insert(0) += g.searches;
            }
        }
        for (_, searches) in per_loc {
            total += 1;
            if searches < 5 {
                sparse += 1;
            }
        }
        if total > 0 && sparse * 2 > total {
            data.warnings.push(format!(
                "sparse searches for {race}: {sparse}/{total} locations have fewer than 5 searches"
            ));
        }
    }

    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{Gender, LocationKind};

    fn record(race: Race, loc: &str, searched: bool, hit: bool) -> StopRecord {
        StopRecord {
            state: "WA".to_string(),
            stop_date: Some(chrono::NaiveDate::from_ymd_opt(2013, 1, 15).unwrap()),
            stop_time: None,
            location: Some(loc.to_string()),
            location_kind: LocationKind::County,
            driver_race: race,
            driver_gender: Gender::Male,
            driver_age: Some(30),
            violations: vec![],
            stop_purpose: None,
            search_conducted: Some(searched),
            search_types: vec![],
            contraband_found: if searched { Some(hit) } else { None },
            outcome: None,
            extras: Default::default(),
        }
    }

    fn corpus(per_loc: &[(&str, usize)]) -> Vec<StopRecord> {
        let mut out = Vec::new();
        for &(loc, n) in per_loc {
            for i in 0..n {
                let race = match i % 3 {
                    0 => Race::White,
                    1 => Race::Black,
                    _ => Race::Hispanic,
                };
                let searched = i % 10 == 0;
                let hit = i % 20 == 0;
                out.push(record(race, loc, searched, searched && hit));
            }
        }
        out
    }

    #[test]
    fn min_stops_boundary() {
        let records = corpus(&[("A", 999), ("B", 1000), ("C", 1500)]);
        let data = prepare(&records, &PrepareOptions::default()).unwrap();
        assert_eq!(data.locations, vec!["C".to_string(), "B".to_string()]);
    }

    #[test]
    fn max_locations_keeps_most_stopped() {
        let per_loc: Vec<(String, usize)> =
            (0..120).map(|i| (format!("L{i:03}"), 1000 + i)).collect();
        let refs: Vec<(&str, usize)> = per_loc.iter().map(|(l, n)| (l.as_str(), *n)).collect();
        let records = corpus(&refs);
        let data = prepare(&records, &PrepareOptions::default()).unwrap();
        assert_eq!(data.locations.len(), 100);
        // the 20 least-stopped qualifying locations are gone
        assert!(!data.locations.iter().any(|l| l == "L000"));
        assert!(data.locations.iter().any(|l| l == "L119"));
        assert_eq!(data.locations[0], "L119");
    }

    #[test]
    fn too_few_locations_rejected() {
        let records = corpus(&[("A", 5000)]);
        let err = prepare(&records, &PrepareOptions::default()).unwrap_err();
        assert!(err.to_string().contains("at least 2"));
    }

    #[test]
    fn sparse_minority_searches_warn() {
        let mut records = corpus(&[("A", 2000), ("B", 2000)]);
        // strip all searches of Hispanic drivers
        for r in records.iter_mut() {
            if r.driver_race == Race::Hispanic {
                r.search_conducted = Some(false);
                r.contraband_found = None;
            }
        }
        let data = prepare(&records, &PrepareOptions::default()).unwrap();
        assert!(
            data.warnings.iter().any(|w| w.contains("Hispanic")),
            "warnings: {:?}",
            data.warnings
        );
    }

    #[test]
    fn dense_grid_and_counts() {
        let records = corpus(&[("A", 3000), ("B", 2000)]);
        let data = prepare(&records, &PrepareOptions::default()).unwrap();
        assert_eq!(data.groups.len(), 3 * 2);
        let total: u64 = data.groups.iter().map(|g| g.stops).sum();
        assert_eq!(total, 5000);
        for g in &data.groups {
            assert!(g.hits <= g.searches && g.searches <= g.stops);
        }
    }

    #[test]
    fn csv_round_trip() {
        let records = corpus(&[("A", 3000), ("B", 2000)]);
        let data = prepare(&records, &PrepareOptions::default()).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = ThresholdData::read_csv(&buf[..]).unwrap();
        assert_eq!(back.groups, data.groups);
        assert_eq!(back.races, data.races);
    }

    #[test]
    fn period_split_tags_groups() {
        let mut records = corpus(&[("A", 2000), ("B", 2000)]);
        for (i, r) in records.iter_mut().enumerate() {
            let year = if i % 2 == 0 { 2012 } else { 2014 };
            r.stop_date = Some(chrono::NaiveDate::from_ymd_opt(year, 6, 1).unwrap());
        }
        let options = PrepareOptions {
            period_split: Some(chrono::NaiveDate::from_ymd_opt(2013, 1, 1).unwrap()),
            ..Default::default()
        };
        let data = prepare(&records, &options).unwrap();
        assert!(data.has_periods);
        assert_eq!(data.groups.len(), 3 * 2 * 2);
        let pre: u64 =
            data.groups.iter().filter(|g| g.period == Some(Period::Pre)).map(|g| g.stops).sum();
        let post: u64 =
            data.groups.iter().filter(|g| g.period == Some(Period::Post)).map(|g| g.stops).sum();
        assert_eq!(pre, 2000);
        assert_eq!(post, 2000);
    }
}
