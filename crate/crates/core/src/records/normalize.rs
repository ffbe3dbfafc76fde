//! Raw-row parsing and field normalization.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{Datelike, NaiveDate, NaiveTime, Timelike};

use crate::error::{Error, Result};
use crate::records::schema::{RefTables, StandardField, StateSchema};
use crate::records::types::{Gender, Outcome, Race, RawRow, StopRecord};

/// A parsed line or a line routed to the error sink.
#[derive(Debug)]
pub enum RowOutcome {
    Row(RawRow),
    Malformed { line: u64, reason: String },
}

/// Parse a delimited export into raw rows; malformed lines are yielded with
/// their line numbers, never silently dropped.
pub fn parse_source<R: Read>(reader: R, schema: &StateSchema) -> Result<Vec<RowOutcome>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .quote(schema.quote)
        .has_headers(schema.has_header)
        .flexible(true)
        .from_reader(reader);

    let header: Vec<String> = if schema.has_header {
        rdr.headers()?.iter().map(|h| h.trim().to_string()).collect()
    } else {
        return Err(Error::config("headerless inputs are not supported; schemas map by column name".to_string()));
    };
    schema.check_header(&header)?;

    let mut out = Vec::new();
    let mut records = rdr.into_records();
    loop {
        let line = records.reader().position().line();
        match records.next() {
            None => break,
            Some(Ok(rec)) => {
                if rec.len() != header.len() {
                    out.push(RowOutcome::Malformed {
                        line,
                        reason: format!("expected {} fields, found {}", header.len(), rec.len()),
                    });
                    continue;
                }
                let columns = header
                    .iter()
                    .cloned()
                    .zip(rec.iter().map(|v| v.to_string()))
                    .collect();
                out.push(RowOutcome::Row(RawRow { source_state: schema.state.clone(), line, columns }));
            }
            Some(Err(e)) => {
                out.push(RowOutcome::Malformed { line, reason: e.to_string() });
            }
        }
    }
    Ok(out)
}

/// Per-rule counters accumulated during normalization.
pub type RuleCounters = BTreeMap<String, u64>;

pub(crate) fn bump(counters: &mut RuleCounters, key: &str) {
    *counters.entry(key.to_string()).or_insert(0) += 1;
}

/// Outcome of normalizing one raw row.
#[derive(Debug)]
pub enum NormalizeOutcome {
    Record(Box<StopRecord>),
    /// Rows whose only parseable date uses an ambiguous two-digit year are
    /// rejected rather than guessed at.
    Reject { line: u64, reason: String },
}

fn field<'a>(row: &'a RawRow, schema: &StateSchema, f: StandardField) -> Option<&'a str> {
    let col = schema.columns.get(&f)?;
    let v = row.get(col)?.trim();
    if v.is_empty() {
        None
    } else {
        Some(v)
    }
}

/// Apply all normalization rules to one raw row.
///
/// Unmappable values become Unknown/absent and increment the audit counters;
/// the function itself only rejects ambiguous two-digit-year dates.
pub fn normalize_record(
    row: &RawRow,
    schema: &StateSchema,
    tables: &RefTables,
    counters: &mut RuleCounters,
) -> NormalizeOutcome {
    let mut rec = StopRecord {
        state: schema.state.clone(),
        stop_date: None,
        stop_time: None,
        location: None,
        location_kind: schema.location_kind,
        driver_race: Race::Unknown,
        driver_gender: Gender::Unknown,
        driver_age: None,
        violations: Vec::new(),
        stop_purpose: None,
        search_conducted: None,
        search_types: Vec::new(),
        contraband_found: None,
        outcome: None,
        extras: BTreeMap::new(),
    };

    // stop date
    if let Some(raw) = field(row, schema, StandardField::StopDate) {
        match parse_date(raw, &schema.date_formats) {
            DateParse::Ok(d) => rec.stop_date = Some(d),
            DateParse::TwoDigitYear => {
                return NormalizeOutcome::Reject {
                    line: row.line,
                    reason: format!("ambiguous two-digit year in date '{raw}'"),
                };
            }
            DateParse::Fail => bump(counters, "date_unparsed"),
        }
    }

    // stop time; a literal 00:00 is a missing-data sentinel in some states
    if let Some(raw) = field(row, schema, StandardField::StopTime) {
        match parse_time(raw, &schema.time_formats) {
            Some(t) => {
                let minute = (t.hour() * 60 + t.minute()) as u16;
                if minute == 0 && schema.midnight_time_missing {
                    bump(counters, "time_midnight_as_missing");
                } else {
                    rec.stop_time = Some(minute);
                }
            }
            None => bump(counters, "time_unparsed"),
        }
    }

    // location via lookup table
    if let Some(raw) = field(row, schema, StandardField::Location) {
        match tables.location(raw) {
            Some(id) => rec.location = Some(id.to_string()),
            None => bump(counters, "location_unmapped"),
        }
    }

    // race, with Hispanic ethnicity override
    if let Some(raw) = field(row, schema, StandardField::Race) {
        match schema.maps.race(raw) {
            Some(r) => rec.driver_race = r,
            None => bump(counters, "race_unmapped"),
        }
    }
    if let Some(raw) = field(row, schema, StandardField::Ethnicity) {
        if schema.maps.is_hispanic_ethnicity(raw) {
            rec.driver_race = Race::Hispanic;
        }
    }

    if let Some(raw) = field(row, schema, StandardField::Gender) {
        match schema.maps.gender(raw) {
            Some(g) => rec.driver_gender = g,
            None => bump(counters, "gender_unmapped"),
        }
    }

    // age: direct, or computed from birth date / birth year
    let age: Option<i64> = if let Some(raw) = field(row, schema, StandardField::Age) {
        match raw.parse::<i64>() {
            Ok(a) => Some(a),
            Err(_) => {
                bump(counters, "age_unparsed");
                None
            }
        }
    } else if let Some(raw) = field(row, schema, StandardField::BirthDate) {
        match parse_date(raw, &schema.date_formats) {
            DateParse::Ok(dob) => rec.stop_date.map(|stop| age_at(dob, stop)),
            _ => {
                bump(counters, "birth_date_unparsed");
                None
            }
        }
    } else if let Some(raw) = field(row, schema, StandardField::BirthYear) {
        match raw.parse::<i64>() {
            Ok(by) => rec.stop_date.map(|stop| stop.year() as i64 - by),
            Err(_) => {
                bump(counters, "birth_year_unparsed");
                None
            }
        }
    } else {
        None
    };
    match age {
        Some(a) if (15..100).contains(&a) => rec.driver_age = Some(a as u8),
        Some(_) => bump(counters, "age_out_of_range"),
        None => {}
    }

    // violations: list, all retained, mapped through the taxonomy
    if let Some(raw) = field(row, schema, StandardField::Violations) {
        for item in raw.split(schema.list_separator.as_str()) {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            match tables.violation(item) {
                Some(code) => {
                    let code = code.to_string();
                    if !rec.violations.contains(&code) {
                        rec.violations.push(code);
                    }
                }
                None => bump(counters, "violation_unmapped"),
            }
        }
    }

    if let Some(raw) = field(row, schema, StandardField::StopPurpose) {
        match tables.violation(raw) {
            Some(code) => rec.stop_purpose = Some(code.to_string()),
            None => bump(counters, "stop_purpose_unmapped"),
        }
    }

    if let Some(raw) = field(row, schema, StandardField::SearchConducted) {
        match schema.maps.boolean(raw) {
            Some(b) => rec.search_conducted = Some(b),
            None => bump(counters, "search_conducted_unmapped"),
        }
    }

    if let Some(raw) = field(row, schema, StandardField::SearchTypes) {
        for item in raw.split(schema.list_separator.as_str()) {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            let st = match schema.maps.search_type(item) {
                Some(st) => st,
                None => {
                    bump(counters, "search_type_unmapped_as_other");
                    crate::records::types::SearchType::Other
                }
            };
            if !rec.search_types.contains(&st) {
                rec.search_types.push(st);
            }
        }
    }

    if let Some(raw) = field(row, schema, StandardField::ContrabandFound) {
        match schema.maps.boolean(raw) {
            Some(b) => rec.contraband_found = Some(b),
            None => bump(counters, "contraband_unmapped"),
        }
    }
    // contraband recorded without a search is treated as not found
    if rec.contraband_found == Some(true) && rec.search_conducted != Some(true) {
        rec.contraband_found = Some(false);
        bump(counters, "contraband_without_search_set_false");
    }

    // outcome: several states report multiple outcomes; keep the most severe
    if let Some(raw) = field(row, schema, StandardField::Outcome) {
        let mut outcomes: Vec<Outcome> = Vec::new();
        for item in raw.split(schema.list_separator.as_str()) {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            match schema.maps.outcome(item) {
                Some(o) => outcomes.push(o),
                None => bump(counters, "outcome_unmapped"),
            }
        }
        rec.outcome = Outcome::most_severe(outcomes);
    }

    for (name, col) in &schema.extras {
        if let Some(v) = row.get(col) {
            let v = v.trim();
            if !v.is_empty() {
                rec.extras.insert(name.clone(), v.to_string());
            }
        }
    }

    NormalizeOutcome::Record(Box::new(rec))
}

enum DateParse {
    Ok(NaiveDate),
    TwoDigitYear,
    Fail,
}

fn parse_date(raw: &str, formats: &[String]) -> DateParse {
    for fmt in formats {
        if let Ok(d) = NaiveDate::parse_from_str(raw, fmt) {
            // chrono's %Y accepts bare "13" as year 13; a pre-1900 parse is an
            // ambiguous two-digit year, not a real stop date
            if d.year() < 1900 {
                return DateParse::TwoDigitYear;
            }
            return DateParse::Ok(d);
        }
    }
    // schemas reject %y formats outright, so a two-digit year can only appear
    // as data that merely looks like one; flag the common m/d/yy shape
    let parts: Vec<&str> = raw.split(['/', '-']).collect();
    if parts.len() == 3 && parts[2].len() == 2 && parts.iter().all(|p| p.chars().all(|c| c.is_ascii_digit())) {
        return DateParse::TwoDigitYear;
    }
    DateParse::Fail
}

fn parse_time(raw: &str, formats: &[String]) -> Option<NaiveTime> {
    for fmt in formats {
        if let Ok(t) = NaiveTime::parse_from_str(raw, fmt) {
            return Some(t);
        }
    }
    None
}

/// Completed years between birth and stop date.
fn age_at(dob: NaiveDate, stop: NaiveDate) -> i64 {
    let mut age = stop.year() as i64 - dob.year() as i64;
    if (stop.month(), stop.day()) < (dob.month(), dob.day()) {
        age -= 1;
    }
    age
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_schema() -> StateSchema {
        StateSchema::from_str(
            r#"
state = NC
location_kind = district
col.stop_date = Date
col.stop_time = Time
col.location = District
col.race = Race
col.ethnicity = Ethnicity
col.gender = Sex
col.birth_date = DOB
col.violations = Violations
col.search_conducted = Search
col.contraband_found = Contraband
col.outcome = Action
date_formats = %Y-%m-%d
time_formats = %H:%M
midnight_time_missing = true
list_separator = ;
map.race.White = W
map.race.Black = B
map.race.Other = I
map.gender.Male = M
map.gender.Female = F
map.bool.true = Y
map.bool.false = N
map.outcome.Citation = CITATION
map.outcome.WrittenWarning = WRITTEN WARNING
map.ethnicity.hispanic = H
"#,
        )
        .unwrap()
    }

    fn tables() -> RefTables {
        let mut t = RefTables::default();
        t.locations.insert("D7".to_string(), "NC-D7".to_string());
        t.violations.insert("SPEEDING".to_string(), "speeding".to_string());
        t
    }

    fn row(cols: &[(&str, &str)]) -> RawRow {
        RawRow {
            source_state: "NC".to_string(),
            line: 2,
            columns: cols.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    #[test]
    fn age_from_birth_date() {
        let mut counters = RuleCounters::new();
        let r = row(&[("Date", "2013-05-02"), ("DOB", "1990-05-01"), ("Race", "W"), ("Sex", "M")]);
        let NormalizeOutcome::Record(rec) = normalize_record(&r, &test_schema(), &tables(), &mut counters) else {
            panic!("rejected");
        };
        assert_eq!(rec.driver_age, Some(23));
        // birthday not yet reached
        let r = row(&[("Date", "2013-04-30"), ("DOB", "1990-05-01")]);
        let NormalizeOutcome::Record(rec) = normalize_record(&r, &test_schema(), &tables(), &mut counters) else {
            panic!("rejected");
        };
        assert_eq!(rec.driver_age, Some(22));
    }

    #[test]
    fn out_of_range_age_is_dropped() {
        let schema = StateSchema::from_str(
            "state = TX\ncol.age = Age\ncol.race = Race\nmap.race.White = W\n",
        )
        .unwrap();
        let mut counters = RuleCounters::new();
        let r = row(&[("Age", "112"), ("Race", "W")]);
        let NormalizeOutcome::Record(rec) = normalize_record(&r, &schema, &RefTables::default(), &mut counters)
        else {
            panic!("rejected");
        };
        assert_eq!(rec.driver_age, None);
        assert_eq!(counters["age_out_of_range"], 1);
        let r = row(&[("Age", "14"), ("Race", "W")]);
        normalize_record(&r, &schema, &RefTables::default(), &mut counters);
        assert_eq!(counters["age_out_of_range"], 2);
    }

    #[test]
    fn most_severe_outcome_wins() {
        let mut counters = RuleCounters::new();
        let r = row(&[("Action", "citation; written warning")]);
        let NormalizeOutcome::Record(rec) = normalize_record(&r, &test_schema(), &tables(), &mut counters) else {
            panic!("rejected");
        };
        assert_eq!(rec.outcome, Some(Outcome::Citation));
    }

    #[test]
    fn midnight_time_treated_as_missing() {
        let mut counters = RuleCounters::new();
        let r = row(&[("Time", "00:00")]);
        let NormalizeOutcome::Record(rec) = normalize_record(&r, &test_schema(), &tables(), &mut counters) else {
            panic!("rejected");
        };
        assert_eq!(rec.stop_time, None);
        assert_eq!(counters["time_midnight_as_missing"], 1);
        let r = row(&[("Time", "00:01")]);
        let NormalizeOutcome::Record(rec) = normalize_record(&r, &test_schema(), &tables(), &mut counters) else {
            panic!("rejected");
        };
        assert_eq!(rec.stop_time, Some(1));
    }

    #[test]
    fn contraband_without_search_is_false() {
        let mut counters = RuleCounters::new();
        let r = row(&[("Contraband", "Y"), ("Search", "N")]);
        let NormalizeOutcome::Record(rec) = normalize_record(&r, &test_schema(), &tables(), &mut counters) else {
            panic!("rejected");
        };
        assert_eq!(rec.contraband_found, Some(false));
        assert_eq!(counters["contraband_without_search_set_false"], 1);
        rec.validate().unwrap();
    }

    #[test]
    fn hispanic_ethnicity_overrides_race() {
        let mut counters = RuleCounters::new();
        let r = row(&[("Race", "W"), ("Ethnicity", "H")]);
        let NormalizeOutcome::Record(rec) = normalize_record(&r, &test_schema(), &tables(), &mut counters) else {
            panic!("rejected");
        };
        assert_eq!(rec.driver_race, Race::Hispanic);
    }

    #[test]
    fn two_digit_year_rejected() {
        let mut counters = RuleCounters::new();
        let r = row(&[("Date", "05/02/13")]);
        match normalize_record(&r, &test_schema(), &tables(), &mut counters) {
            NormalizeOutcome::Reject { reason, .. } => assert!(reason.contains("two-digit")),
            _ => panic!("expected rejection"),
        }
    }

    #[test]
    fn normalization_is_idempotent_on_values() {
        // unmapped tokens become Unknown and stay Unknown
        let mut counters = RuleCounters::new();
        let r = row(&[("Race", "ZZ"), ("Sex", "??")]);
        let NormalizeOutcome::Record(rec) = normalize_record(&r, &test_schema(), &tables(), &mut counters) else {
            panic!("rejected");
        };
        assert_eq!(rec.driver_race, Race::Unknown);
        assert_eq!(rec.driver_gender, Gender::Unknown);
    }

    #[test]
    fn parse_source_routes_malformed_lines() {
        let schema = StateSchema::from_str(
            "state = TX\ncol.race = Race\ncol.outcome = Outcome\nmap.race.White = W\n",
        )
        .unwrap();
        let data = "Race,Outcome\nW,citation\nW,warning,extra\nB\nB,arrest\n";
        let rows = parse_source(data.as_bytes(), &schema).unwrap();
        let ok: Vec<_> = rows.iter().filter(|r| matches!(r, RowOutcome::Row(_))).collect();
        let bad: Vec<_> = rows
            .iter()
            .filter_map(|r| match r {
                RowOutcome::Malformed { line, .. } => Some(*line),
                _ => None,
            })
            .collect();
        assert_eq!(ok.len(), 2);
        assert_eq!(bad, vec![3, 4], "ragged rows hit the sink with their line numbers");
    }

    #[test]
    fn quoted_delimiter_stays_intact() {
        let schema = StateSchema::from_str(
            "state = TX\ncol.race = Race\ncol.violations = V\nmap.race.White = W\n",
        )
        .unwrap();
        let data = "Race,V\nW,\"speeding, reckless\"\n";
        let rows = parse_source(data.as_bytes(), &schema).unwrap();
        match &rows[0] {
            RowOutcome::Row(r) => assert_eq!(r.get("V"), Some("speeding, reckless")),
            _ => panic!("row should parse"),
        }
    }

    #[test]
    fn empty_file_gives_empty_stream() {
        let schema = StateSchema::from_str(
            "state = TX\ncol.race = Race\nmap.race.White = W\n",
        )
        .unwrap();
        // header only: zero rows, zero errors
        let rows = parse_source("Race\n".as_bytes(), &schema).unwrap();
        assert!(rows.is_empty());
    }
}
