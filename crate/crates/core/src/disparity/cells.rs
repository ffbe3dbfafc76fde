//! Count cells: stops aggregated per (race, age bin, gender, location, year)
//! stratum against the census driving-age benchmark.

use std::collections::BTreeMap;
use std::io::Read;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::records::{Gender, Race, StopRecord};

/// Age bins used across the analyses; 16-19 is the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum AgeBin {
    A16to19,
    A20to29,
    A30to39,
    A40to49,
    A50plus,
}

impl AgeBin {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgeBin::A16to19 => "16-19",
            AgeBin::A20to29 => "20-29",
            AgeBin::A30to39 => "30-39",
            AgeBin::A40to49 => "40-49",
            AgeBin::A50plus => "50+",
        }
    }

    pub const ALL: [AgeBin; 5] =
        [AgeBin::A16to19, AgeBin::A20to29, AgeBin::A30to39, AgeBin::A40to49, AgeBin::A50plus];

    pub fn parse(s: &str) -> Option<AgeBin> {
        AgeBin::ALL.iter().copied().find(|b| b.as_str() == s)
    }
}

/// Bin a driver age in years; ages below 16 fall into the lowest bin.
pub fn age_bin(age: u8) -> AgeBin {
    match age {
        0..=19 => AgeBin::A16to19,
        20..=29 => AgeBin::A20to29,
        30..=39 => AgeBin::A30to39,
        40..=49 => AgeBin::A40to49,
        _ => AgeBin::A50plus,
    }
}

/// One aggregation stratum with its benchmark population.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountCell {
    pub race: Race,
    pub age_bin: AgeBin,
    pub gender: Gender,
    pub location: String,
    pub year: i32,
    pub stops: u64,
    pub benchmark_pop: f64,
}

/// Census driving-age population keyed on (location, race, age bin, gender, year).
#[derive(Debug, Clone, Default)]
pub struct CensusTable {
    pub population: BTreeMap<(String, Race, AgeBin, Gender, i32), f64>,
}

pub fn census_key(
    location: &str,
    race: Race,
    age: AgeBin,
    gender: Gender,
    year: i32,
) -> (String, Race, AgeBin, Gender, i32) {
    (location.to_string(), race, age, gender, year)
}

impl CensusTable {
    /// CSV columns: `location,race,age_bin,gender,year,population`.
    ///
    /// District-coded states supply rows already aggregated over the counties
    /// each district subsumes.
    pub fn from_csv<R: Read>(input: R) -> Result<CensusTable> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let expected = ["location", "race", "age_bin", "gender", "year", "population"];
        if rdr.headers()?.iter().ne(expected) {
            return Err(Error::validation(format!("census file needs columns {expected:?}")));
        }
        let mut table = CensusTable::default();
        for rec in rdr.records() {
            let rec = rec?;
            let race = Race::parse(&rec[1])
                .ok_or_else(|| Error::validation(format!("bad race '{}' in census file", &rec[1])))?;
            let age = AgeBin::parse(&rec[2])
                .ok_or_else(|| Error::validation(format!("bad age_bin '{}' in census file", &rec[2])))?;
            let gender = Gender::parse(&rec[3])
                .ok_or_else(|| Error::validation(format!("bad gender '{}' in census file", &rec[3])))?;
            let year: i32 = rec[4]
                .parse()
                .map_err(|e| Error::validation(format!("bad year '{}': {e}", &rec[4])))?;
            let pop: f64 = rec[5]
                .parse()
                .map_err(|e| Error::validation(format!("bad population '{}': {e}", &rec[5])))?;
            if pop < 0.0 {
                return Err(Error::validation(format!("negative population for {}", &rec[0])));
            }
            table.population.insert((rec[0].to_string(), race, age, gender, year), pop);
        }
        Ok(table)
    }
}

/// Stops that could not be assigned to a cell, by reason.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CoverageReport {
    pub missing_age: u64,
    pub missing_gender: u64,
    pub missing_location: u64,
    pub missing_year: u64,
    pub no_census_row: u64,
    /// Locations that appeared in stops but have no census coverage.
    pub uncovered_locations: Vec<String>,
}

impl CoverageReport {
    pub fn total_excluded(&self) -> u64 {
        self.missing_age + self.missing_gender + self.missing_location + self.missing_year + self.no_census_row
    }
}

/// Aggregate records into count cells against the census benchmark.
///
/// Every stop with a complete key lands in exactly one cell; cells with zero
/// stops but positive benchmark population are included, since structural
/// zeros carry information for the count models. Stops whose stratum has no
/// census row are routed to the coverage report.
pub fn build_cells(records: &[StopRecord], census: &CensusTable) -> (Vec<CountCell>, CoverageReport) {
    let mut report = CoverageReport::default();
    let mut counts: BTreeMap<(String, Race, AgeBin, Gender, i32), u64> = BTreeMap::new();
    let mut uncovered: std::collections::BTreeSet<String> = Default::default();

    for r in records {
        let Some(location) = r.location.as_deref() else {
            report.missing_location += 1;
            continue;
        };
        let Some(year) = r.year() else {
            report.missing_year += 1;
            continue;
        };
        let Some(age) = r.driver_age else {
            report.missing_age += 1;
            continue;
        };
        if r.driver_gender == Gender::Unknown {
            report.missing_gender += 1;
            continue;
        }
        let key = census_key(location, r.driver_race, age_bin(age), r.driver_gender, year);
        if !census.population.contains_key(&key) {
            report.no_census_row += 1;
            uncovered.insert(location.to_string());
            continue;
        }
        *counts.entry(key).or_insert(0) += 1;
    }

    let mut cells = Vec::with_capacity(census.population.len());
    for (key, &pop) in &census.population {
        let stops = counts.get(key).copied().unwrap_or(0);
        cells.push(CountCell {
            location: key.0.clone(),
            race: key.1,
            age_bin: key.2,
            gender: key.3,
            year: key.4,
            stops,
            benchmark_pop: pop,
        });
    }
    report.uncovered_locations = uncovered.into_iter().collect();
    (cells, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::LocationKind;

    fn record(race: Race, age: Option<u8>, gender: Gender, loc: Option<&str>, year: i32) -> StopRecord {
        StopRecord {
            state: "WA".into(),
            stop_date: Some(chrono::NaiveDate::from_ymd_opt(year, 5, 1).unwrap()),
            stop_time: None,
            location: loc.map(str::to_string),
            location_kind: LocationKind::County,
            driver_race: race,
            driver_gender: gender,
            driver_age: age,
            violations: vec![],
            stop_purpose: None,
            search_conducted: None,
            search_types: vec![],
            contraband_found: None,
            outcome: None,
            extras: Default::default(),
        }
    }

    fn census() -> CensusTable {
        let mut t = CensusTable::default();
        t.population.insert(census_key("A", Race::White, AgeBin::A20to29, Gender::Male, 2013), 1000.0);
        t.population.insert(census_key("A", Race::Black, AgeBin::A20to29, Gender::Male, 2013), 500.0);
        t
    }

    #[test]
    fn stops_sharing_keys_collapse_to_one_cell() {
        let records = vec![
            record(Race::White, Some(25), Gender::Male, Some("A"), 2013),
            record(Race::White, Some(22), Gender::Male, Some("A"), 2013),
        ];
        let (cells, report) = build_cells(&records, &census());
        assert_eq!(report.total_excluded(), 0);
        let cell = cells.iter().find(|c| c.race == Race::White).unwrap();
        assert_eq!(cell.stops, 2);
        // zero-stop cell with positive population is retained
        let zero = cells.iter().find(|c| c.race == Race::Black).unwrap();
        assert_eq!(zero.stops, 0);
        assert_eq!(zero.benchmark_pop, 500.0);
    }

    #[test]
    fn incomplete_keys_go_to_coverage_report() {
        let records = vec![
            record(Race::White, None, Gender::Male, Some("A"), 2013),
            record(Race::White, Some(25), Gender::Unknown, Some("A"), 2013),
            record(Race::White, Some(25), Gender::Male, None, 2013),
        ];
        let (_, report) = build_cells(&records, &census());
        assert_eq!(report.missing_age, 1);
        assert_eq!(report.missing_gender, 1);
        assert_eq!(report.missing_location, 1);
        assert_eq!(report.total_excluded(), 3);
    }

    #[test]
    fn stops_without_census_rows_are_reported() {
        let records = vec![record(Race::Hispanic, Some(25), Gender::Male, Some("B"), 2013)];
        let (cells, report) = build_cells(&records, &census());
        assert_eq!(report.no_census_row, 1);
        assert_eq!(report.uncovered_locations, vec!["B".to_string()]);
        // the stop does not appear in any cell
        assert_eq!(cells.iter().map(|c| c.stops).sum::<u64>(), 0);
    }

    #[test]
    fn conservation_of_records() {
        let records = vec![
            record(Race::White, Some(25), Gender::Male, Some("A"), 2013),
            record(Race::White, None, Gender::Male, Some("A"), 2013),
            record(Race::Black, Some(21), Gender::Male, Some("A"), 2013),
        ];
        let (cells, report) = build_cells(&records, &census());
        let in_cells: u64 = cells.iter().map(|c| c.stops).sum();
        assert_eq!(in_cells + report.total_excluded(), records.len() as u64);
    }

    #[test]
    fn age_bins() {
        assert_eq!(age_bin(16), AgeBin::A16to19);
        assert_eq!(age_bin(19), AgeBin::A16to19);
        assert_eq!(age_bin(20), AgeBin::A20to29);
        assert_eq!(age_bin(49), AgeBin::A40to49);
        assert_eq!(age_bin(50), AgeBin::A50plus);
        assert_eq!(age_bin(99), AgeBin::A50plus);
    }
}
