//! Per-state schema configs and reference tables.
//!
//! Schemas are declarative flat key-value files (documented in the README) so
//! onboarding a new state means writing config, not code. A schema names the
//! raw column for each standardized field, value maps from raw tokens to the
//! standardized enums, date/time format lists, and the state's dedup key.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::records::types::{DedupKey, Gender, LocationKind, Outcome, Race, SearchType, SurnameEntry};

/// Standardized fields a raw column can map onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StandardField {
    StopDate,
    StopTime,
    Location,
    Race,
    Ethnicity,
    Gender,
    Age,
    BirthYear,
    BirthDate,
    Violations,
    StopPurpose,
    SearchConducted,
    SearchTypes,
    ContrabandFound,
    Outcome,
}

impl StandardField {
    pub fn parse(s: &str) -> Option<StandardField> {
        Some(match s {
            "stop_date" => StandardField::StopDate,
            "stop_time" => StandardField::StopTime,
            "location" => StandardField::Location,
            "race" => StandardField::Race,
            "ethnicity" => StandardField::Ethnicity,
            "gender" => StandardField::Gender,
            "age" => StandardField::Age,
            "birth_year" => StandardField::BirthYear,
            "birth_date" => StandardField::BirthDate,
            "violations" => StandardField::Violations,
            "stop_purpose" => StandardField::StopPurpose,
            "search_conducted" => StandardField::SearchConducted,
            "search_types" => StandardField::SearchTypes,
            "contraband_found" => StandardField::ContrabandFound,
            "outcome" => StandardField::Outcome,
            _ => return None,
        })
    }
}

/// Raw-token value maps; matching is case-insensitive on trimmed values.
#[derive(Debug, Clone, Default)]
pub struct ValueMaps {
    pub race: Vec<(Race, Vec<String>)>,
    pub gender: Vec<(Gender, Vec<String>)>,
    pub outcome: Vec<(Outcome, Vec<String>)>,
    pub search_type: Vec<(SearchType, Vec<String>)>,
    pub bool_true: Vec<String>,
    pub bool_false: Vec<String>,
    /// Raw ethnicity tokens that mean Hispanic.
    pub ethnicity_hispanic: Vec<String>,
}

fn lookup<'a, T: Copy>(map: &'a [(T, Vec<String>)], raw: &str) -> Option<T> {
    let tok = raw.trim().to_uppercase();
    map.iter().find(|(_, tokens)| tokens.iter().any(|t| *t == tok)).map(|(v, _)| *v)
}

impl ValueMaps {
    pub fn race(&self, raw: &str) -> Option<Race> {
        lookup(&self.race, raw)
    }
    pub fn gender(&self, raw: &str) -> Option<Gender> {
        lookup(&self.gender, raw)
    }
    pub fn outcome(&self, raw: &str) -> Option<Outcome> {
        lookup(&self.outcome, raw)
    }
    pub fn search_type(&self, raw: &str) -> Option<SearchType> {
        lookup(&self.search_type, raw)
    }
    pub fn boolean(&self, raw: &str) -> Option<bool> {
        let tok = raw.trim().to_uppercase();
        if self.bool_true.iter().any(|t| *t == tok) {
            Some(true)
        } else if self.bool_false.iter().any(|t| *t == tok) {
            Some(false)
        } else {
            None
        }
    }
    pub fn is_hispanic_ethnicity(&self, raw: &str) -> bool {
        let tok = raw.trim().to_uppercase();
        self.ethnicity_hispanic.iter().any(|t| *t == tok)
    }
}

/// Declarative description of one state's raw export.
#[derive(Debug, Clone)]
pub struct StateSchema {
    pub state: String,
    pub location_kind: LocationKind,
    pub delimiter: u8,
    pub quote: u8,
    pub has_header: bool,
    pub list_separator: String,
    /// Treat "00:00" stop times as missing (the North-Carolina-style sentinel).
    pub midnight_time_missing: bool,
    pub columns: BTreeMap<StandardField, String>,
    /// Extra raw columns preserved under a standardized name (surname,
    /// officer id, mileposts, ...) for dedup keys and reclassification.
    pub extras: BTreeMap<String, String>,
    pub date_formats: Vec<String>,
    pub time_formats: Vec<String>,
    pub maps: ValueMaps,
    pub dedup_key: Option<DedupKey>,
}

/// Parse a flat `key = value` config; `#`-prefixed lines are comments.
pub fn parse_flat_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Error::config(format!("line {}: expected 'key = value', got '{trimmed}'", i + 1)));
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn split_tokens(value: &str) -> Vec<String> {
    value.split('|').map(|t| t.trim().to_uppercase()).filter(|t| !t.is_empty()).collect()
}

impl StateSchema {
    pub fn from_file(path: &Path) -> Result<StateSchema> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read schema {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<StateSchema> {
        let mut schema = StateSchema {
            state: String::new(),
            location_kind: LocationKind::County,
            delimiter: b',',
            quote: b'"',
            has_header: true,
            list_separator: ";".to_string(),
            midnight_time_missing: false,
            columns: BTreeMap::new(),
            extras: BTreeMap::new(),
            date_formats: Vec::new(),
            time_formats: Vec::new(),
            maps: ValueMaps::default(),
            dedup_key: None,
        };

        for (key, value) in parse_flat_kv(text)? {
            match key.as_str() {
                "state" => schema.state = value,
                "location_kind" => {
                    schema.location_kind = LocationKind::parse(&value)
                        .ok_or_else(|| Error::config(format!("unknown location_kind '{value}'")))?;
                }
                "delimiter" => {
                    let bytes = value.as_bytes();
                    if bytes.len() != 1 {
                        return Err(Error::config(format!("delimiter must be a single byte, got '{value}'")));
                    }
                    schema.delimiter = bytes[0];
                }
                "quote" => {
                    let bytes = value.as_bytes();
                    if bytes.len() != 1 {
                        return Err(Error::config(format!("quote must be a single byte, got '{value}'")));
                    }
                    schema.quote = bytes[0];
                }
                "has_header" => schema.has_header = parse_bool(&value)?,
                "list_separator" => schema.list_separator = value,
                "midnight_time_missing" => schema.midnight_time_missing = parse_bool(&value)?,
                "date_formats" => {
                    schema.date_formats = value.split('|').map(|s| s.trim().to_string()).collect()
                }
                "time_formats" => {
                    schema.time_formats = value.split('|').map(|s| s.trim().to_string()).collect()
                }
                "dedup_key" => {
                    let names: Vec<String> =
                        value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                    if names.is_empty() {
                        return Err(Error::config("dedup_key must name at least one field".to_string()));
                    }
                    schema.dedup_key = Some(DedupKey { column_names: names });
                }
                _ => {
                    if let Some(field) = key.strip_prefix("col.") {
                        let f = StandardField::parse(field)
                            .ok_or_else(|| Error::config(format!("unknown standardized field '{field}'")))?;
                        schema.columns.insert(f, value);
                    } else if let Some(name) = key.strip_prefix("extra.") {
                        schema.extras.insert(name.to_string(), value);
                    } else if let Some(rest) = key.strip_prefix("map.") {
                        apply_map_entry(&mut schema.maps, rest, &value)?;
                    } else {
                        return Err(Error::config(format!("unknown schema key '{key}'")));
                    }
                }
            }
        }

        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        if self.state.len() != 2 {
            return Err(Error::config(format!("state must be a 2-letter code, got '{}'", self.state)));
        }
        if self.columns.is_empty() {
            return Err(Error::config("schema maps no columns".to_string()));
        }
        for fmt in &self.date_formats {
            if fmt.contains("%y") {
                return Err(Error::config(format!(
                    "date format '{fmt}' uses an ambiguous two-digit year; spell out %Y"
                )));
            }
        }
        if self.columns.contains_key(&StandardField::Age)
            && (self.columns.contains_key(&StandardField::BirthYear)
                || self.columns.contains_key(&StandardField::BirthDate))
        {
            return Err(Error::config(
                "map either a direct age column or a birth date/year column, not both".to_string(),
            ));
        }
        if let Some(key) = &self.dedup_key {
            for name in &key.column_names {
                let is_standard = StandardField::parse(name).map(|f| self.columns.contains_key(&f)).unwrap_or(false);
                let is_extra = self.extras.contains_key(name);
                if !is_standard && !is_extra {
                    return Err(Error::config(format!(
                        "dedup key field '{name}' is not a mapped standardized field or extra"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Check that every referenced raw column exists in the file header.
    pub fn check_header(&self, header: &[String]) -> Result<()> {
        let mut missing = Vec::new();
        for col in self.columns.values().chain(self.extras.values()) {
            if !header.iter().any(|h| h == col) {
                missing.push(col.clone());
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "schema for {} references columns missing from the input header: {missing:?}",
                self.state
            )))
        }
    }
}

fn apply_map_entry(maps: &mut ValueMaps, rest: &str, value: &str) -> Result<()> {
    let Some((kind, target)) = rest.split_once('.') else {
        return Err(Error::config(format!("map key 'map.{rest}' needs the form map.<kind>.<target>")));
    };
    let tokens = split_tokens(value);
    match kind {
        "race" => {
            let race = Race::parse(target)
                .ok_or_else(|| Error::config(format!("unknown race '{target}' in value map")))?;
            maps.race.push((race, tokens));
        }
        "gender" => {
            let g = Gender::parse(target)
                .ok_or_else(|| Error::config(format!("unknown gender '{target}' in value map")))?;
            maps.gender.push((g, tokens));
        }
        "outcome" => {
            let o = Outcome::parse(target)
                .ok_or_else(|| Error::config(format!("unknown outcome '{target}' in value map")))?;
            maps.outcome.push((o, tokens));
        }
        "search_type" => {
            let s = SearchType::parse(target)
                .ok_or_else(|| Error::config(format!("unknown search type '{target}' in value map")))?;
            maps.search_type.push((s, tokens));
        }
        "bool" => match target {
            "true" => maps.bool_true.extend(tokens),
            "false" => maps.bool_false.extend(tokens),
            other => return Err(Error::config(format!("map.bool target must be true/false, got '{other}'"))),
        },
        "ethnicity" => match target {
            "hispanic" => maps.ethnicity_hispanic.extend(tokens),
            other => return Err(Error::config(format!("map.ethnicity target must be 'hispanic', got '{other}'"))),
        },
        other => return Err(Error::config(format!("unknown value-map kind '{other}'"))),
    }
    Ok(())
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::config(format!("expected true/false, got '{other}'"))),
    }
}

/// Location and violation lookups, loaded once and shared read-only.
#[derive(Debug, Clone, Default)]
pub struct RefTables {
    /// uppercased raw location token -> normalized location id
    pub locations: BTreeMap<String, String>,
    /// uppercased raw violation token -> taxonomy code
    pub violations: BTreeMap<String, String>,
}

impl RefTables {
    pub fn location(&self, raw: &str) -> Option<&str> {
        self.locations.get(&raw.trim().to_uppercase()).map(String::as_str)
    }

    pub fn violation(&self, raw: &str) -> Option<&str> {
        self.violations.get(&raw.trim().to_uppercase()).map(String::as_str)
    }

    /// Load a two-column CSV (raw, normalized) into a lookup.
    pub fn load_lookup(path: &Path) -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::config(format!("lookup {} needs two columns", path.display())));
            }
            map.insert(rec[0].trim().to_uppercase(), rec[1].trim().to_string());
        }
        Ok(map)
    }
}

/// Census surname table: name -> fraction Hispanic.
#[derive(Debug, Clone, Default)]
pub struct SurnameTable {
    entries: BTreeMap<String, f64>,
    pub skipped: u64,
}

impl SurnameTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.get(name).copied()
    }

    pub fn insert(&mut self, entry: SurnameEntry) -> Result<()> {
        if !(0.0..=1.0).contains(&entry.pct_hispanic) {
            return Err(Error::validation(format!(
                "pct_hispanic must be in [0,1], got {} for {}",
                entry.pct_hispanic, entry.name
            )));
        }
        self.entries.insert(entry.name.to_uppercase(), entry.pct_hispanic);
        Ok(())
    }

    /// Load the Census file: columns `name` and `pcthispanic` (a percentage).
    /// Suppressed or non-numeric percentages are skipped and counted.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<SurnameTable> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let name_idx = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case("name"))
            .ok_or_else(|| Error::config("surname file needs a 'name' column".to_string()))?;
        let pct_idx = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case("pcthispanic"))
            .ok_or_else(|| Error::config("surname file needs a 'pcthispanic' column".to_string()))?;

        let mut table = SurnameTable::default();
        for rec in rdr.records() {
            let rec = rec?;
            let name = rec.get(name_idx).unwrap_or("").trim().to_uppercase();
            let pct_raw = rec.get(pct_idx).unwrap_or("").trim();
            match pct_raw.parse::<f64>() {
                Ok(pct) if (0.0..=100.0).contains(&pct) && !name.is_empty() => {
                    table.entries.insert(name, pct / 100.0);
                }
                _ => table.skipped += 1,
            }
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = r#"
# test schema
state = CO
location_kind = county
delimiter = ,
list_separator = ;
midnight_time_missing = false

col.stop_date = StopDate
col.stop_time = StopTime
col.location = County
col.race = Race
col.ethnicity = Ethnicity
col.gender = Sex
col.birth_date = DOB
col.violations = Violation
col.search_conducted = Searched
col.search_types = SearchBasis
col.contraband_found = Contraband
col.outcome = Result
extra.surname = LastName
extra.officer_id = OfficerId

date_formats = %Y-%m-%d|%m/%d/%Y
time_formats = %H:%M

map.race.White = W|WHITE
map.race.Black = B|BLACK
map.race.Hispanic = H
map.race.Other = I|OTHER
map.gender.Male = M
map.gender.Female = F
map.bool.true = Y|YES|TRUE|1
map.bool.false = N|NO|FALSE|0
map.outcome.Citation = CITATION
map.outcome.WrittenWarning = WRITTEN WARNING
map.search_type.Consent = CONSENT
map.search_type.K9 = K9|DRUG DOG ALERT
map.ethnicity.hispanic = H|HISPANIC

dedup_key = officer_id,surname,birth_date,location,stop_date,stop_time
"#;

    #[test]
    fn parses_full_schema() {
        let s = StateSchema::from_str(SCHEMA).unwrap();
        assert_eq!(s.state, "CO");
        assert_eq!(s.columns[&StandardField::Race], "Race");
        assert_eq!(s.extras["surname"], "LastName");
        assert_eq!(s.maps.race("white").unwrap(), Race::White);
        assert_eq!(s.maps.search_type("Drug Dog Alert").unwrap(), SearchType::K9);
        assert!(s.maps.boolean("YES").unwrap());
        assert!(!s.maps.boolean("n").unwrap());
        assert!(s.maps.is_hispanic_ethnicity("hispanic"));
        assert_eq!(s.dedup_key.as_ref().unwrap().column_names.len(), 6);
    }

    #[test]
    fn rejects_two_digit_years() {
        let bad = SCHEMA.replace("date_formats = %Y-%m-%d|%m/%d/%Y", "date_formats = %m/%d/%y");
        let err = StateSchema::from_str(&bad).unwrap_err();
        assert!(err.to_string().contains("two-digit"));
    }

    #[test]
    fn rejects_unknown_keys_and_dedup_fields() {
        let bad = format!("{SCHEMA}\nnot_a_key = 1\n");
        assert!(StateSchema::from_str(&bad).is_err());
        let bad = SCHEMA.replace("dedup_key = officer_id,surname,birth_date,location,stop_date,stop_time", "dedup_key = nonexistent");
        assert!(StateSchema::from_str(&bad).is_err());
    }

    #[test]
    fn header_check_reports_missing_columns() {
        let s = StateSchema::from_str(SCHEMA).unwrap();
        let ok_header: Vec<String> = [
            "StopDate", "StopTime", "County", "Race", "Ethnicity", "Sex", "DOB", "Violation",
            "Searched", "SearchBasis", "Contraband", "Result", "LastName", "OfficerId",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        s.check_header(&ok_header).unwrap();
        let mut bad = ok_header.clone();
        bad.retain(|h| h != "DOB");
        let err = s.check_header(&bad).unwrap_err();
        assert!(err.to_string().contains("DOB"));
    }

    #[test]
    fn surname_table_parses_percentages() {
        let csv = "name,rank,pcthispanic\nGARCIA,8,92.03\nSMITH,1,1.56\nODDONE,900,(S)\n";
        let t = SurnameTable::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t.get("GARCIA").unwrap() - 0.9203).abs() < 1e-12);
        assert_eq!(t.skipped, 1);
    }
}
