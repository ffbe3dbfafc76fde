//! Standardized stop-record types.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Race {
    White,
    Black,
    Hispanic,
    Asian,
    Other,
    Unknown,
}

impl Race {
    pub fn as_str(&self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Black => "Black",
            Race::Hispanic => "Hispanic",
            Race::Asian => "Asian",
            Race::Other => "Other",
            Race::Unknown => "Unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Race> {
        match s {
            "White" => Some(Race::White),
            "Black" => Some(Race::Black),
            "Hispanic" => Some(Race::Hispanic),
            "Asian" => Some(Race::Asian),
            "Other" => Some(Race::Other),
            "Unknown" => Some(Race::Unknown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl Gender {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
            Gender::Unknown => "Unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Gender> {
        match s {
            "Male" => Some(Gender::Male),
            "Female" => Some(Gender::Female),
            "Unknown" => Some(Gender::Unknown),
            _ => None,
        }
    }
}

/// Stop outcome, ordered by legal gravity; `most_severe` relies on the
/// derived ordering (Arrest highest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    None,
    VerbalWarning,
    WrittenWarning,
    Citation,
    Summons,
    Arrest,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Arrest => "Arrest",
            Outcome::Summons => "Summons",
            Outcome::Citation => "Citation",
            Outcome::WrittenWarning => "WrittenWarning",
            Outcome::VerbalWarning => "VerbalWarning",
            Outcome::None => "None",
        }
    }

    pub fn parse(s: &str) -> Option<Outcome> {
        match s {
            "Arrest" => Some(Outcome::Arrest),
            "Summons" => Some(Outcome::Summons),
            "Citation" => Some(Outcome::Citation),
            "WrittenWarning" => Some(Outcome::WrittenWarning),
            "VerbalWarning" => Some(Outcome::VerbalWarning),
            "None" => Some(Outcome::None),
            _ => None,
        }
    }

    pub fn most_severe(outcomes: impl IntoIterator<Item = Outcome>) -> Option<Outcome> {
        outcomes.into_iter().max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SearchType {
    Consent,
    ProbableCause,
    IncidentToArrest,
    Inventory,
    Warrant,
    ProtectiveFrisk,
    K9,
    Other,
}

impl SearchType {
    pub fn as_str(&self) -> &'static str {
        match self {
            SearchType::Consent => "Consent",
            SearchType::ProbableCause => "ProbableCause",
            SearchType::IncidentToArrest => "IncidentToArrest",
            SearchType::Inventory => "Inventory",
            SearchType::Warrant => "Warrant",
            SearchType::ProtectiveFrisk => "ProtectiveFrisk",
            SearchType::K9 => "K9",
            SearchType::Other => "Other",
        }
    }

    pub fn parse(s: &str) -> Option<SearchType> {
        match s {
            "Consent" => Some(SearchType::Consent),
            "ProbableCause" => Some(SearchType::ProbableCause),
            "IncidentToArrest" => Some(SearchType::IncidentToArrest),
            "Inventory" => Some(SearchType::Inventory),
            "Warrant" => Some(SearchType::Warrant),
            "ProtectiveFrisk" => Some(SearchType::ProtectiveFrisk),
            "K9" => Some(SearchType::K9),
            "Other" => Some(SearchType::Other),
            _ => None,
        }
    }
}

/// What a location id refers to: county FIPS for most states, a
/// district/division/zone code for the three district-coded ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocationKind {
    County,
    District,
    Division,
    Zone,
}

impl LocationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LocationKind::County => "county",
            LocationKind::District => "district",
            LocationKind::Division => "division",
            LocationKind::Zone => "zone",
        }
    }

    pub fn parse(s: &str) -> Option<LocationKind> {
        match s {
            "county" => Some(LocationKind::County),
            "district" => Some(LocationKind::District),
            "division" => Some(LocationKind::Division),
            "zone" => Some(LocationKind::Zone),
            _ => None,
        }
    }
}

/// One raw input row, values byte-for-byte as read.
#[derive(Debug, Clone)]
pub struct RawRow {
    pub source_state: String,
    pub line: u64,
    /// (column name, value) in file order; names are unique per file.
    pub columns: Vec<(String, String)>,
}

impl RawRow {
    pub fn get(&self, column: &str) -> Option<&str> {
        self.columns.iter().find(|(name, _)| name == column).map(|(_, v)| v.as_str())
    }
}

/// A standardized stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub state: String,
    pub stop_date: Option<chrono::NaiveDate>,
    /// Minute of day, 0..1440.
    pub stop_time: Option<u16>,
    pub location: Option<String>,
    pub location_kind: LocationKind,
    pub driver_race: Race,
    pub driver_gender: Gender,
    pub driver_age: Option<u8>,
    pub violations: Vec<String>,
    pub stop_purpose: Option<String>,
    pub search_conducted: Option<bool>,
    pub search_types: Vec<SearchType>,
    pub contraband_found: Option<bool>,
    pub outcome: Option<Outcome>,
    /// Auxiliary standardized fields (surname, officer id, ...) used by
    /// deduplication and surname reclassification; not part of the fixed
    /// output column order.
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub extras: std::collections::BTreeMap<String, String>,
}

impl StopRecord {
    pub fn year(&self) -> Option<i32> {
        self.stop_date.map(|d| chrono::Datelike::year(&d))
    }

    /// Enforce the record-level invariants.
    pub fn validate(&self) -> Result<()> {
        if let Some(age) = self.driver_age {
            if !(15..100).contains(&(age as i64)) {
                return Err(Error::validation(format!("driver_age {age} outside [15,100)")));
            }
        }
        if self.contraband_found == Some(true) && self.search_conducted != Some(true) {
            return Err(Error::validation(
                "contraband_found=true requires search_conducted=true".to_string(),
            ));
        }
        if let Some(t) = self.stop_time {
            if t >= 1440 {
                return Err(Error::validation(format!("stop_time {t} outside minute-of-day range")));
            }
        }
        Ok(())
    }
}

/// Census surname table entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SurnameEntry {
    pub name: String,
    pub pct_hispanic: f64,
}

/// Ordered field names that define duplicate equality for a state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupKey {
    pub column_names: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_severity_order() {
        assert!(Outcome::Arrest > Outcome::Summons);
        assert!(Outcome::Summons > Outcome::Citation);
        assert!(Outcome::Citation > Outcome::WrittenWarning);
        assert!(Outcome::WrittenWarning > Outcome::VerbalWarning);
        assert!(Outcome::VerbalWarning > Outcome::None);
        assert_eq!(
            Outcome::most_severe([Outcome::Citation, Outcome::WrittenWarning]),
            Some(Outcome::Citation)
        );
        assert_eq!(Outcome::most_severe([]), None);
    }

    #[test]
    fn enum_round_trips() {
        for r in [Race::White, Race::Black, Race::Hispanic, Race::Asian, Race::Other, Race::Unknown] {
            assert_eq!(Race::parse(r.as_str()), Some(r));
        }
        for o in [Outcome::Arrest, Outcome::Summons, Outcome::Citation, Outcome::WrittenWarning, Outcome::VerbalWarning, Outcome::None] {
            assert_eq!(Outcome::parse(o.as_str()), Some(o));
        }
        for s in [SearchType::Consent, SearchType::ProbableCause, SearchType::IncidentToArrest, SearchType::Inventory, SearchType::Warrant, SearchType::ProtectiveFrisk, SearchType::K9, SearchType::Other] {
            assert_eq!(SearchType::parse(s.as_str()), Some(s));
        }
    }

    #[test]
    fn record_invariants() {
        let mut rec = StopRecord {
            state: "CO".to_string(),
            stop_date: None,
            stop_time: None,
            location: None,
            location_kind: LocationKind::County,
            driver_race: Race::White,
            driver_gender: Gender::Unknown,
            driver_age: Some(30),
            violations: vec![],
            stop_purpose: None,
            search_conducted: None,
            search_types: vec![],
            contraband_found: None,
            outcome: None,
            extras: Default::default(),
        };
        rec.validate().unwrap();
        rec.contraband_found = Some(true);
        assert!(rec.validate().is_err());
        rec.search_conducted = Some(true);
        rec.validate().unwrap();
        rec.driver_age = Some(14);
        assert!(rec.validate().is_err());
    }
}
