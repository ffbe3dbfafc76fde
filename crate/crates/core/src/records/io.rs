//! Standardized-record serialization.
//!
//! Fixed column order (documented in the README):
//! `state, stop_date, stop_time, location, location_kind, driver_race,
//! driver_gender, driver_age, violations, stop_purpose, search_conducted,
//! search_types, contraband_found, outcome`.
//!
//! Lists are pipe-separated, booleans are `true`/`false`, dates are
//! `YYYY-MM-DD`, times are `HH:MM`, and missing values are empty fields.
//! Dedup/reclassification extras are working data and are not emitted.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::records::types::{Gender, LocationKind, Outcome, Race, SearchType, StopRecord};

pub const STANDARD_COLUMNS: [&str; 14] = [
    "state",
    "stop_date",
    "stop_time",
    "location",
    "location_kind",
    "driver_race",
    "driver_gender",
    "driver_age",
    "violations",
    "stop_purpose",
    "search_conducted",
    "search_types",
    "contraband_found",
    "outcome",
];

fn minute_to_hhmm(minute: u16) -> String {
    format!("{:02}:{:02}", minute / 60, minute % 60)
}

fn hhmm_to_minute(s: &str) -> Option<u16> {
    let (h, m) = s.split_once(':')?;
    let h: u16 = h.parse().ok()?;
    let m: u16 = m.parse().ok()?;
    if h < 24 && m < 60 {
        Some(h * 60 + m)
    } else {
        None
    }
}

pub fn write_standardized<W: Write>(records: &[StopRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STANDARD_COLUMNS)?;
    for r in records {
        w.write_record(&[
            r.state.clone(),
            r.stop_date.map(|d| d.to_string()).unwrap_or_default(),
            r.stop_time.map(minute_to_hhmm).unwrap_or_default(),
            r.location.clone().unwrap_or_default(),
            r.location_kind.as_str().to_string(),
            r.driver_race.as_str().to_string(),
            r.driver_gender.as_str().to_string(),
            r.driver_age.map(|a| a.to_string()).unwrap_or_default(),
            r.violations.join("|"),
            r.stop_purpose.clone().unwrap_or_default(),
            r.search_conducted.map(|b| b.to_string()).unwrap_or_default(),
            r.search_types.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("|"),
            r.contraband_found.map(|b| b.to_string()).unwrap_or_default(),
            r.outcome.map(|o| o.as_str().to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt(s: &str) -> Option<&str> {
    if s.is_empty() {
        None
    } else {
        Some(s)
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::validation(format!("expected true/false, got '{other}'"))),
    }
}

pub fn read_standardized<R: Read>(input: R) -> Result<Vec<StopRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(STANDARD_COLUMNS) {
        return Err(Error::validation(format!(
            "not a standardized records file; header was {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let record = StopRecord {
            state: get(0).to_string(),
            stop_date: opt(get(1))
                .map(|s| {
                    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                        .map_err(|e| Error::validation(format!("bad stop_date '{s}': {e}")))
                })
                .transpose()?,
            stop_time: opt(get(2))
                .map(|s| hhmm_to_minute(s).ok_or_else(|| Error::validation(format!("bad stop_time '{s}'"))))
                .transpose()?,
            location: opt(get(3)).map(str::to_string),
            location_kind: LocationKind::parse(get(4))
                .ok_or_else(|| Error::validation(format!("bad location_kind '{}'", get(4))))?,
            driver_race: Race::parse(get(5))
                .ok_or_else(|| Error::validation(format!("bad driver_race '{}'", get(5))))?,
            driver_gender: Gender::parse(get(6))
                .ok_or_else(|| Error::validation(format!("bad driver_gender '{}'", get(6))))?,
            driver_age: opt(get(7))
                .map(|s| s.parse::<u8>().map_err(|e| Error::validation(format!("bad driver_age '{s}': {e}"))))
                .transpose()?,
            violations: get(8).split('|').filter(|s| !s.is_empty()).map(str::to_string).collect(),
            stop_purpose: opt(get(9)).map(str::to_string),
            search_conducted: opt(get(10)).map(parse_bool).transpose()?,
            search_types: get(11)
                .split('|')
                .filter(|s| !s.is_empty())
                .map(|s| SearchType::parse(s).ok_or_else(|| Error::validation(format!("bad search_type '{s}'"))))
                .collect::<Result<Vec<_>>>()?,
            contraband_found: opt(get(12)).map(parse_bool).transpose()?,
            outcome: opt(get(13))
                .map(|s| Outcome::parse(s).ok_or_else(|| Error::validation(format!("bad outcome '{s}'"))))
                .transpose()?,
            extras: Default::default(),
        };
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_records() {
        let records = vec![
            StopRecord {
                state: "WA".to_string(),
                stop_date: Some(chrono::NaiveDate::from_ymd_opt(2013, 2, 3).unwrap()),
                stop_time: Some(23 * 60 + 5),
                location: Some("53033".to_string()),
                location_kind: LocationKind::County,
                driver_race: Race::Hispanic,
                driver_gender: Gender::Female,
                driver_age: Some(44),
                violations: vec!["speeding".into(), "equipment".into()],
                stop_purpose: Some("speeding".into()),
                search_conducted: Some(true),
                search_types: vec![SearchType::Consent, SearchType::K9],
                contraband_found: Some(true),
                outcome: Some(Outcome::Citation),
                extras: Default::default(),
            },
            StopRecord {
                state: "WA".to_string(),
                stop_date: None,
                stop_time: None,
                location: None,
                location_kind: LocationKind::County,
                driver_race: Race::Unknown,
                driver_gender: Gender::Unknown,
                driver_age: None,
                violations: vec![],
                stop_purpose: None,
                search_conducted: None,
                search_types: vec![],
                contraband_found: None,
                outcome: None,
                extras: Default::default(),
            },
        ];
        let mut buf = Vec::new();
        write_standardized(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("state,stop_date,stop_time,location,location_kind,driver_race"));
        assert!(text.contains("23:05"));
        assert!(text.contains("Consent|K9"));
        let back = read_standardized(&buf[..]).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn rejects_foreign_headers() {
        assert!(read_standardized("a,b,c\n1,2,3\n".as_bytes()).is_err());
    }
}
