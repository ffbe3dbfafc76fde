//! Property tests for the spec-level invariants.

use proptest::prelude::*;
use std::collections::BTreeSet;
use stopstat::glm::{fit_logistic, Design};
use stopstat::numerics::{beta_tail_mean, reg_inc_beta, BetaShape};
use stopstat::records::{run_pipeline, RefTables, StateSchema, SurnameTable};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn incomplete_beta_symmetry(
        x in 0.001f64..0.999,
        a in 0.05f64..150.0,
        b in 0.05f64..150.0,
    ) {
        let s = reg_inc_beta(x, a, b).unwrap() + reg_inc_beta(1.0 - x, b, a).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12, "symmetry defect {}", s - 1.0);
    }

    #[test]
    fn incomplete_beta_monotone_in_x(
        x in 0.01f64..0.95,
        dx in 0.001f64..0.04,
        a in 0.2f64..60.0,
        b in 0.2f64..60.0,
    ) {
        let lo = reg_inc_beta(x, a, b).unwrap();
        let hi = reg_inc_beta(x + dx, a, b).unwrap();
        prop_assert!(hi >= lo, "I must be non-decreasing: {lo} vs {hi}");
    }

    #[test]
    fn conditional_tail_mean_exceeds_threshold(
        phi in 0.02f64..0.98,
        lambda in 0.2f64..80.0,
        t in 0.01f64..0.95,
    ) {
        let tail = beta_tail_mean(BetaShape::new(phi, lambda).unwrap(), t).unwrap();
        if tail.search_rate > 1e-12 {
            prop_assert!(
                tail.hit_rate >= t - 1e-9,
                "conditional mean {} below threshold {t}",
                tail.hit_rate
            );
            prop_assert!(tail.hit_rate <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn two_by_two_logit_matches_closed_form(
        a1 in 5u32..400,
        a0 in 5u32..400,
        b1 in 5u32..400,
        b0 in 5u32..400,
    ) {
        let mut builder = Design::builder();
        builder.factor("g", ["A", "B"]);
        builder.push_row(&["A"], &[], 1.0, a1 as f64, 0.0).unwrap();
        builder.push_row(&["A"], &[], 0.0, a0 as f64, 0.0).unwrap();
        builder.push_row(&["B"], &[], 1.0, b1 as f64, 0.0).unwrap();
        builder.push_row(&["B"], &[], 0.0, b0 as f64, 0.0).unwrap();
        let fit = fit_logistic(&builder.build().unwrap()).unwrap();
        let closed = ((b1 as f64 / b0 as f64) / (a1 as f64 / a0 as f64)).ln();
        let coef = fit.coefficient("g=B").unwrap();
        prop_assert!((coef - closed).abs() <= 1e-8, "{coef} vs {closed}");
    }
}

const PROP_SCHEMA: &str = r#"
state = ZZ
location_kind = county
col.stop_date = Date
col.stop_time = Time
col.location = County
col.race = Race
col.gender = Sex
col.age = Age
col.search_conducted = Search
col.contraband_found = Contraband
col.outcome = Outcome
date_formats = %Y-%m-%d
time_formats = %H:%M
midnight_time_missing = true
map.race.White = W
map.race.Black = B
map.race.Hispanic = H
map.gender.Male = M
map.gender.Female = F
map.bool.true = Y
map.bool.false = N
map.outcome.Citation = CIT
map.outcome.Arrest = ARR
"#;

fn raw_row_strategy() -> impl Strategy<Value = String> {
    let date = prop_oneof![
        Just("2013-04-05".to_string()),
        Just("2012-11-30".to_string()),
        Just("garbage".to_string()),
        Just(String::new()),
    ];
    let time = prop_oneof![
        Just("00:00".to_string()),
        Just("14:25".to_string()),
        Just("bad".to_string()),
        Just(String::new()),
    ];
    let county = prop_oneof![Just("KING".to_string()), Just("NOWHERE".to_string()), Just(String::new())];
    let race = prop_oneof![
        Just("W".to_string()),
        Just("B".to_string()),
        Just("H".to_string()),
        Just("?".to_string()),
        Just(String::new()),
    ];
    let sex = prop_oneof![Just("M".to_string()), Just("F".to_string()), Just(String::new())];
    let age = prop_oneof![
        (15u32..99).prop_map(|a| a.to_string()),
        Just("7".to_string()),
        Just("140".to_string()),
        Just("x".to_string()),
        Just(String::new()),
    ];
    let search = prop_oneof![Just("Y".to_string()), Just("N".to_string()), Just(String::new())];
    let contraband = prop_oneof![Just("Y".to_string()), Just("N".to_string()), Just(String::new())];
    let outcome = prop_oneof![Just("CIT".to_string()), Just("ARR".to_string()), Just(String::new())];
    (date, time, county, race, sex, age, search, contraband, outcome).prop_map(
        |(d, t, c, r, s, a, se, co, o)| format!("{d},{t},{c},{r},{s},{a},{se},{co},{o}"),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Conservation holds and every output record satisfies its invariants
    /// for arbitrary messy inputs; a second normalization pass through the
    /// standardized vocabulary is the identity.
    #[test]
    fn pipeline_conservation_and_idempotence(rows in prop::collection::vec(raw_row_strategy(), 0..40)) {
        let schema = StateSchema::from_str(PROP_SCHEMA).unwrap();
        let mut tables = RefTables::default();
        tables.locations.insert("KING".into(), "53033".into());

        let mut input = String::from("Date,Time,County,Race,Sex,Age,Search,Contraband,Outcome\n");
        for row in &rows {
            input.push_str(row);
            input.push('\n');
        }
        let none: Option<&SurnameTable> = None;
        let (records, audit) =
            run_pipeline(input.as_bytes(), &schema, &tables, none, &BTreeSet::new()).unwrap();

        prop_assert_eq!(audit.input_rows as usize, rows.len());
        prop_assert!(audit.conservation_holds(), "audit: {:?}", audit);
        for r in &records {
            prop_assert!(r.validate().is_ok());
            if let Some(age) = r.driver_age {
                prop_assert!((15..100).contains(&(age as i64)));
            }
            if r.contraband_found == Some(true) {
                prop_assert_eq!(r.search_conducted, Some(true));
            }
        }

        // idempotence: standardized output re-read is unchanged
        let mut buf = Vec::new();
        stopstat::records::write_standardized(&records, &mut buf).unwrap();
        let back = stopstat::records::read_standardized(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            let mut b = b.clone();
            b.extras.clear();
            prop_assert_eq!(a, &b);
        }
    }

    /// Dedup never grows a stream and collapsing is idempotent.
    #[test]
    fn dedup_shrinks_and_is_idempotent(officers in prop::collection::vec(0u8..6, 1..30)) {
        use stopstat::records::{dedupe, DedupKey, Gender, LocationKind, Race, StopRecord};
        let records: Vec<StopRecord> = officers
            .iter()
            .map(|o| {
                let mut r = StopRecord {
                    state: "ZZ".into(),
                    stop_date: None,
                    stop_time: None,
                    location: None,
                    location_kind: LocationKind::County,
                    driver_race: Race::White,
                    driver_gender: Gender::Unknown,
                    driver_age: None,
                    violations: vec![],
                    stop_purpose: None,
                    search_conducted: None,
                    search_types: vec![],
                    contraband_found: None,
                    outcome: None,
                    extras: Default::default(),
                };
                r.extras.insert("officer_id".into(), o.to_string());
                r
            })
            .collect();
        let key = DedupKey { column_names: vec!["officer_id".into()] };
        let (once, removed) = dedupe(records.clone(), &key);
        prop_assert!(once.len() <= records.len());
        prop_assert_eq!(once.len() + removed as usize, records.len());
        let (twice, removed_again) = dedupe(once.clone(), &key);
        prop_assert_eq!(&twice, &once, "dedup of a duplicate-free stream is the identity");
        prop_assert_eq!(removed_again, 0);
    }
}
