//! Disparity and policy analyses against synthetic oracles.

use chrono::NaiveDate;
use stopstat::disparity::{
    build_cells, census_key, outcome_test, poststop_analysis, stop_rate_analysis, AgeBin,
    CensusTable, ControlSet, PostStopOutcome,
};
use stopstat::glm::{predict_rate, predict_rate_marginal, Family, Profile};
use stopstat::records::{Gender, LocationKind, Outcome, Race, SearchType, StopRecord};
use stopstat::synth::{gen_binary, gen_counts, BinarySynthConfig, CountSynthConfig};

#[test]
fn stop_rate_null_data_has_no_race_effect() {
    // equal race-specific rates: the race coefficients are pure noise
    let (cells, _) = gen_counts(&CountSynthConfig {
        seed: 30,
        n_locations: 10,
        years: vec![2012, 2014],
        race_effects: [0.0, 0.0],
        phi: Some(4.0),
        ..Default::default()
    })
    .unwrap();
    let result = stop_rate_analysis(&cells, Family::NegBin).unwrap();
    for race in ["race=Black", "race=Hispanic"] {
        let coef = result.fit.coefficient(race).unwrap();
        let se = result.fit.std_error(race).unwrap();
        assert!(coef.abs() <= 2.0 * se, "{race}: {coef} vs se {se}");
    }
}

#[test]
fn stop_rate_families_agree_on_signs_and_poisson_matches_quasi() {
    let (cells, truth) = gen_counts(&CountSynthConfig {
        seed: 31,
        n_locations: 8,
        years: vec![2012, 2014],
        phi: Some(4.0),
        ..Default::default()
    })
    .unwrap();
    let nb = stop_rate_analysis(&cells, Family::NegBin).unwrap();
    let pois = stop_rate_analysis(&cells, Family::Poisson).unwrap();
    let quasi = stop_rate_analysis(&cells, Family::QuasiPoisson).unwrap();
    assert_eq!(pois.fit.coefficients, quasi.fit.coefficients);
    assert!(quasi.fit.dispersion > 1.0);
    for term in ["race=Black", "race=Hispanic", "gender=Male"] {
        let t = truth.coefficients[term];
        assert_eq!(nb.fit.coefficient(term).unwrap().signum(), t.signum());
        assert_eq!(pois.fit.coefficient(term).unwrap().signum(), t.signum());
    }
}

#[test]
fn poststop_search_recovers_race_effects() {
    let (records, truth) = gen_binary(&BinarySynthConfig {
        seed: 32,
        states: vec!["MT".into(), "OH".into()],
        stops_per_state_quarter: 8000,
        ..Default::default()
    })
    .unwrap();
    let result = poststop_analysis(&records, PostStopOutcome::Search, ControlSet::RaceLocation).unwrap();
    assert!(result.fit.converged);
    for (term, &true_value) in &truth.race_effects {
        let coef = result.fit.coefficient(term).unwrap();
        let se = result.fit.std_error(term).unwrap();
        assert!(
            (coef - true_value).abs() <= 3.0 * se,
            "{term}: {coef:.3} vs {true_value} (se {se:.4})"
        );
    }
}

#[test]
fn poststop_null_case_is_noise_across_specs() {
    let (records, _) = gen_binary(&BinarySynthConfig {
        seed: 33,
        states: vec!["MT".into(), "OH".into(), "TX".into()],
        stops_per_state_quarter: 1500,
        race_effects: [0.0, 0.0],
        time_trend: 0.0,
        ..Default::default()
    })
    .unwrap();
    for controls in ControlSet::ALL {
        let result = poststop_analysis(&records, PostStopOutcome::Search, controls).unwrap();
        for race in ["race=Black", "race=Hispanic"] {
            let coef = result.fit.coefficient(race).unwrap();
            let se = result.fit.std_error(race).unwrap();
            assert!(coef.abs() <= 3.0 * se, "{controls:?} {race}: {coef:.4} (se {se:.4})");
        }
    }
}

fn record_with(
    state: &str,
    race: Race,
    outcome: Option<Outcome>,
    speeding: bool,
    consent: bool,
) -> StopRecord {
    StopRecord {
        state: state.to_string(),
        stop_date: Some(NaiveDate::from_ymd_opt(2013, 5, 1).unwrap()),
        stop_time: Some(600),
        location: Some(format!("{state}-1")),
        location_kind: LocationKind::County,
        driver_race: race,
        driver_gender: Gender::Male,
        driver_age: Some(30),
        violations: if speeding { vec!["speeding".into()] } else { vec!["equipment".into()] },
        stop_purpose: speeding.then(|| "speeding".to_string()),
        search_conducted: Some(consent),
        search_types: if consent { vec![SearchType::Consent] } else { vec![] },
        contraband_found: consent.then_some(false),
        outcome,
        extras: Default::default(),
    }
}

#[test]
fn citation_outcome_requires_speeding_stops() {
    let mut records = Vec::new();
    // speeding stops with exact per-race citation frequencies
    for (race, cited_of_8) in [(Race::White, 6u32), (Race::Black, 7u32)] {
        for i in 0..200u32 {
            let cited = i % 8 < cited_of_8;
            let outcome = if cited { Outcome::Citation } else { Outcome::WrittenWarning };
            records.push(record_with("MT", race, Some(outcome), true, false));
        }
    }
    // non-speeding stops never count toward the citation analysis
    for _ in 0..200 {
        records.push(record_with("MT", Race::Hispanic, Some(Outcome::Citation), false, false));
    }
    let result =
        poststop_analysis(&records, PostStopOutcome::CitationGivenSpeeding, ControlSet::RaceOnly).unwrap();
    assert_eq!(result.rows_used, 400, "only speeding stops enter");
    let black = result.fit.coefficient("race=Black").unwrap();
    // closed form from the exact 6/8 vs 7/8 citation frequencies
    let expected = ((7.0f64 / 1.0) / (6.0 / 2.0)).ln();
    assert!((black - expected).abs() < 1e-6, "black {black} vs {expected}");
}

#[test]
fn consent_search_restricted_to_reliable_states() {
    let mut records = Vec::new();
    for i in 0..200 {
        let race = if i % 2 == 0 { Race::White } else { Race::Black };
        // consent searches only in-scope in the seven reliable states
        records.push(record_with("CO", race, None, false, i % 10 == 0));
        records.push(record_with("MT", race, None, false, i % 5 == 0));
    }
    let result =
        poststop_analysis(&records, PostStopOutcome::ConsentSearch, ControlSet::RaceOnly).unwrap();
    assert_eq!(result.states_used, vec!["CO".to_string()], "MT is not a consent-search state");
    assert_eq!(result.rows_used, 200);
}

#[test]
fn state_dropped_when_control_field_unavailable() {
    let mut records = Vec::new();
    for i in 0..300 {
        let race = if i % 2 == 0 { Race::White } else { Race::Hispanic };
        let mut r = record_with("MT", race, None, false, i % 7 == 0);
        r.search_conducted = Some(i % 7 == 0);
        records.push(r);
        // OH reports no driver age
        let mut r = record_with("OH", race, None, false, i % 9 == 0);
        r.search_conducted = Some(i % 9 == 0);
        r.driver_age = None;
        records.push(r);
    }
    let result =
        poststop_analysis(&records, PostStopOutcome::Search, ControlSet::RaceLocationDemo).unwrap();
    assert_eq!(result.states_used, vec!["MT".to_string()]);
    assert_eq!(result.states_dropped, vec![("OH".to_string(), "driver_age".to_string())]);
}

#[test]
fn typical_driver_rates_marginalize_over_locations() {
    // two locations with different baselines; the marginal rate is the
    // stop-weighted average of per-location rates
    let (records, _) = gen_binary(&BinarySynthConfig {
        seed: 35,
        states: vec!["MT".into(), "OH".into()],
        stops_per_state_quarter: 5000,
        ..Default::default()
    })
    .unwrap();
    let result = poststop_analysis(&records, PostStopOutcome::Search, ControlSet::RaceLocation).unwrap();

    let locations: Vec<String> = result
        .fit
        .factors
        .iter()
        .find(|f| f.name == "location")
        .unwrap()
        .levels
        .clone();
    let base = Profile::new().set("race", "Black");
    let completions: Vec<(Profile, f64)> = locations
        .iter()
        .enumerate()
        .map(|(i, l)| (Profile::new().set("location", l.clone()), 1.0 + i as f64))
        .collect();
    let marginal = predict_rate_marginal(&result.fit, &base, &completions).unwrap();

    let mut expected = 0.0;
    let mut total = 0.0;
    for (profile, w) in &completions {
        let mut p = base.clone();
        for (k, v) in &profile.levels {
            p = p.set(k.clone(), v.clone());
        }
        expected += w * predict_rate(&result.fit, &p).unwrap();
        total += w;
    }
    assert!((marginal - expected / total).abs() < 1e-12);
}

#[test]
fn cells_census_and_outcome_flow_together() {
    // small end-to-end: records -> cells -> count fit, and the outcome test
    // on the same records
    let mut census = CensusTable::default();
    let mut records = Vec::new();
    for (li, loc) in ["A", "B"].iter().enumerate() {
        for (ri, race) in [Race::White, Race::Black].iter().enumerate() {
            census
                .population
                .insert(census_key(loc, *race, AgeBin::A20to29, Gender::Male, 2013), 1000.0);
            let stops = 40 + 20 * li + 30 * ri;
            for i in 0..stops {
                let mut r = record_with(loc, *race, None, false, i % 5 == 0);
                r.location = Some(loc.to_string());
                r.driver_age = Some(25);
                r.contraband_found = Some(i % 10 == 0 && i % 5 == 0);
                records.push(r);
            }
        }
    }
    let (cells, coverage) = build_cells(&records, &census);
    assert_eq!(coverage.total_excluded(), 0);
    assert_eq!(cells.iter().map(|c| c.stops).sum::<u64>() as usize, records.len());

    let fit = stop_rate_analysis(&cells, Family::Poisson).unwrap();
    assert!(fit.fit.converged);
    assert!(fit.fit.coefficient("race=Black").unwrap() > 0.0, "Black stop rate is elevated by construction");

    let hit = outcome_test(&records);
    for row in &hit.aggregate {
        assert!(row.searches > 0);
        let rate = row.hit_rate.unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
}
