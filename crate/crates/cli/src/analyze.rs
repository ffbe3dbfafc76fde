//! `stopstat analyze`: run the selected analyses over standardized records.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;
use stopstat::disparity::{
    build_cells, outcome_test, poststop_analysis, stop_rate_analysis, CensusTable, ControlSet,
    PostStopOutcome,
};
use stopstat::policy::{did_fit, innocent_search_delta, trend_series, DidOutcome, DidSpec};
use stopstat::records::{filter_analysis_set, Gender, StopRecord};
use stopstat::threshold;

use crate::config::{Analysis, PipelineConfig};
use crate::manifest::Manifest;
use crate::normalize::{input_hashes, list_standardized, read_all_standardized};
use crate::ExitKind;

/// Field-availability bar per state, mirroring the data-availability table:
/// a field counts as available when at least 70% of the state's records
/// carry it.
pub const AVAILABILITY_BAR: f64 = 0.7;

#[derive(Debug, Serialize)]
struct SkipEntry {
    analysis: String,
    state: String,
    missing_field: String,
    availability: f64,
}

#[derive(Debug, Serialize)]
struct RunMetadata {
    seed: u64,
    toolkit_version: String,
    input_sha256: BTreeMap<String, String>,
    decision_constants: BTreeMap<String, String>,
}

fn decision_constants() -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("age_bins".into(), "16-19 (ref), 20-29, 30-39, 40-49, 50+".into());
    m.insert("gender_reference".into(), "Female".into());
    m.insert("race_reference".into(), "White".into());
    m.insert("hour_bins".into(), "eight 3-hour segments".into());
    m.insert("availability_bar".into(), format!("{AVAILABILITY_BAR}"));
    m.insert("threshold_prior_race_scale".into(), format!("{}", threshold::model::RACE_SCALE));
    m.insert("threshold_prior_hyper_scale".into(), format!("{}", threshold::model::HYPER_SCALE));
    m.insert("threshold_prior_post_scale".into(), format!("{}", threshold::model::POST_SCALE));
    m.insert("rhat_bound".into(), format!("{}", threshold::RHAT_BOUND));
    m.insert("table3_marginalization".into(), "stop-weighted average over location/year".into());
    m
}

fn availability(records: &[&StopRecord], field: &str) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let have = records
        .iter()
        .filter(|r| match field {
            "location" => r.location.is_some(),
            "stop_date" => r.stop_date.is_some(),
            "stop_time" => r.stop_time.is_some(),
            "driver_age" => r.driver_age.is_some(),
            "driver_gender" => r.driver_gender != Gender::Unknown,
            "search_conducted" => r.search_conducted.is_some(),
            "contraband_found" => r.search_conducted != Some(true) || r.contraband_found.is_some(),
            "outcome" => r.outcome.is_some(),
            _ => false,
        })
        .count();
    have as f64 / records.len() as f64
}

/// Split records by state and keep the states where every required field
/// clears the availability bar; failures become skip entries.
fn gate_states<'a>(
    records: &'a [StopRecord],
    required: &[&str],
    analysis: &str,
    skips: &mut Vec<SkipEntry>,
) -> Vec<&'a StopRecord> {
    let mut by_state: BTreeMap<&str, Vec<&StopRecord>> = BTreeMap::new();
    for r in records {
        by_state.entry(r.state.as_str()).or_default().push(r);
    }
    let mut kept = Vec::new();
    for (state, rows) in by_state {
        let mut ok = true;
        for field in required {
            let frac = availability(&rows, field);
            if frac < AVAILABILITY_BAR {
                skips.push(SkipEntry {
                    analysis: analysis.to_string(),
                    state: state.to_string(),
                    missing_field: field.to_string(),
                    availability: frac,
                });
                ok = false;
                break;
            }
        }
        if ok {
            kept.extend(rows);
        }
    }
    kept
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, manifest: &mut Manifest, root: &Path) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)?)?;
    manifest.add(root, &path)?;
    Ok(())
}

pub fn run(config: &PipelineConfig) -> Result<()> {
    config.validate_paths(false).map_err(ExitKind::validation)?;
    let standardized = list_standardized(config)?;
    if standardized.is_empty() {
        return Err(ExitKind::validation(anyhow::anyhow!(
            "no standardized files under {}; run normalize first",
            config.output_dir.join("standardized").display()
        ))
        .into());
    }
    let records = read_all_standardized(&standardized)?;
    let analysis_set = filter_analysis_set(&records);
    if analysis_set.is_empty() {
        return Err(ExitKind::validation(anyhow::anyhow!(
            "analysis set is empty after the 2011-2015 White/Black/Hispanic restriction"
        ))
        .into());
    }

    let results_dir = config.output_dir.join("results");
    std::fs::create_dir_all(&results_dir)?;
    let mut manifest = Manifest::default();
    let root = config.output_dir.clone();
    let mut skips: Vec<SkipEntry> = Vec::new();
    let mut non_convergence = false;

    let analyses = if config.analyses.is_empty() {
        vec![Analysis::OutcomeTest]
    } else {
        config.analyses.clone()
    };

    for analysis in &analyses {
        match analysis {
            Analysis::OutcomeTest => {
                let usable = gate_states(
                    &analysis_set,
                    &["search_conducted", "contraband_found"],
                    "outcome_test",
                    &mut skips,
                );
                if usable.is_empty() {
                    continue;
                }
                let owned: Vec<StopRecord> = usable.into_iter().cloned().collect();
                let result = outcome_test(&owned);
                write_json(&results_dir, "outcome_test.json", &result, &mut manifest, &root)?;
            }
            Analysis::StopRate => {
                let Some(census_path) = &config.census_file else {
                    skips.push(SkipEntry {
                        analysis: "stop_rate".into(),
                        state: "*".into(),
                        missing_field: "census_file".into(),
                        availability: 0.0,
                    });
                    continue;
                };
                let census = CensusTable::from_csv(std::fs::File::open(census_path)?)
                    .map_err(ExitKind::validation)?;
                let usable = gate_states(
                    &analysis_set,
                    &["location", "stop_date", "driver_age", "driver_gender"],
                    "stop_rate",
                    &mut skips,
                );
                if usable.is_empty() {
                    continue;
                }
                let owned: Vec<StopRecord> = usable.into_iter().cloned().collect();
                let (cells, coverage) = build_cells(&owned, &census);
                let result =
                    stop_rate_analysis(&cells, config.stop_rate_family).map_err(ExitKind::validation)?;
                if !result.fit.converged {
                    non_convergence = true;
                }
                write_json(&results_dir, "stop_rate.json", &result, &mut manifest, &root)?;
                write_json(&results_dir, "stop_rate_coverage.json", &coverage, &mut manifest, &root)?;

                let points = stopstat::disparity::stop_rate_points(&cells, config.fig2_min_stops);
                write_json(&results_dir, "stop_rate_points.json", &points, &mut manifest, &root)?;
            }
            Analysis::PostStop => {
                let outcome = match config.poststop_outcome.as_str() {
                    "citation" => PostStopOutcome::CitationGivenSpeeding,
                    "search" => PostStopOutcome::Search,
                    "consent_search" => PostStopOutcome::ConsentSearch,
                    "arrest" => PostStopOutcome::Arrest,
                    other => {
                        return Err(ExitKind::validation(anyhow::anyhow!(
                            "unknown poststop.outcome '{other}'"
                        ))
                        .into())
                    }
                };
                let controls = match config.poststop_controls.as_str() {
                    "race" => ControlSet::RaceOnly,
                    "race_location" => ControlSet::RaceLocation,
                    "race_location_time" => ControlSet::RaceLocationTime,
                    "race_location_demo" => ControlSet::RaceLocationDemo,
                    "race_location_time_demo" => ControlSet::RaceLocationTimeDemo,
                    other => {
                        return Err(ExitKind::validation(anyhow::anyhow!(
                            "unknown poststop.controls '{other}'"
                        ))
                        .into())
                    }
                };
                let needed = match outcome {
                    PostStopOutcome::Search => vec!["search_conducted"],
                    PostStopOutcome::ConsentSearch => vec!["search_conducted"],
                    _ => vec!["outcome"],
                };
                let usable = gate_states(&analysis_set, &needed, "poststop", &mut skips);
                if usable.is_empty() {
                    continue;
                }
                let owned: Vec<StopRecord> = usable.into_iter().cloned().collect();
                let result = poststop_analysis(&owned, outcome, controls).map_err(ExitKind::validation)?;
                if !result.fit.converged {
                    non_convergence = true;
                }
                write_json(
                    &results_dir,
                    &format!("poststop_{}_{}.json", config.poststop_outcome, config.poststop_controls),
                    &result,
                    &mut manifest,
                    &root,
                )?;
            }
            Analysis::Threshold => {
                let usable = gate_states(
                    &analysis_set,
                    &["location", "search_conducted", "contraband_found"],
                    "threshold",
                    &mut skips,
                );
                if usable.is_empty() {
                    continue;
                }
                let owned: Vec<StopRecord> = usable.into_iter().cloned().collect();
                let options = threshold::PrepareOptions {
                    min_stops: config.threshold_min_stops,
                    max_locations: config.threshold_max_locations,
                    period_split: None,
                };
                let data = threshold::prepare(&owned, &options).map_err(ExitKind::validation)?;
                let counts_path = results_dir.join("threshold_counts.csv");
                data.write_csv(std::fs::File::create(&counts_path)?)
                    .map_err(anyhow::Error::from)?;
                manifest.add(&root, &counts_path)?;

                let fit_config = threshold::FitConfig {
                    chains: config.threshold_chains,
                    warmup: config.threshold_warmup,
                    draws: config.threshold_draws,
                    seed: config.seed,
                    ..Default::default()
                };
                let fit = threshold::fit(&data, &fit_config).map_err(ExitKind::validation)?;
                if !fit.converged {
                    non_convergence = true;
                }
                let model = threshold::ThresholdModel::new(&data).map_err(ExitKind::validation)?;
                let ppc_rows =
                    threshold::ppc(&model, &fit.draws, &data, config.seed).map_err(ExitKind::validation)?;

                #[derive(Serialize)]
                struct ThresholdSummary<'a> {
                    converged: bool,
                    max_rhat: f64,
                    divergences: usize,
                    warnings: &'a [String],
                    aggregates: &'a [threshold::RaceAggregate],
                    groups: &'a [threshold::GroupThreshold],
                }
                let summary = ThresholdSummary {
                    converged: fit.converged,
                    max_rhat: stopstat::inference::max_rhat(&fit.rhat),
                    divergences: fit.draws.divergence_count,
                    warnings: &fit.warnings,
                    aggregates: &fit.aggregates,
                    groups: &fit.group_thresholds,
                };
                write_json(&results_dir, "threshold_summary.json", &summary, &mut manifest, &root)?;
                write_json(&results_dir, "threshold_ppc.json", &ppc_rows, &mut manifest, &root)?;
            }
            Analysis::Policy => {
                if config.policy_control_states.is_empty() {
                    skips.push(SkipEntry {
                        analysis: "policy".into(),
                        state: "*".into(),
                        missing_field: "policy.control_states".into(),
                        availability: 0.0,
                    });
                    continue;
                }
                let usable =
                    gate_states(&analysis_set, &["stop_date", "search_conducted"], "policy", &mut skips);
                if usable.is_empty() {
                    continue;
                }
                let owned: Vec<StopRecord> = usable.into_iter().cloned().collect();
                let mut spec = DidSpec::marijuana(config.policy_control_states.clone());
                spec.legalization_date = config.policy_legalization_date;
                let did = did_fit(&owned, &spec).map_err(ExitKind::validation)?;
                if !did.fit.converged {
                    non_convergence = true;
                }
                write_json(&results_dir, "policy_did.json", &did, &mut manifest, &root)?;

                let trends = trend_series(
                    &owned,
                    DidOutcome::Search,
                    &spec,
                    &stopstat::policy::default_misdemeanor_codes(),
                )
                .map_err(ExitKind::validation)?;
                write_json(&results_dir, "policy_trends.json", &trends, &mut manifest, &root)?;

                match innocent_search_delta(&owned, &spec) {
                    Ok(delta) => {
                        #[derive(Serialize)]
                        struct Delta {
                            relative_change: f64,
                        }
                        write_json(
                            &results_dir,
                            "policy_innocent_delta.json",
                            &Delta { relative_change: delta },
                            &mut manifest,
                            &root,
                        )?;
                    }
                    Err(e) => skips.push(SkipEntry {
                        analysis: "policy_innocent_delta".into(),
                        state: "*".into(),
                        missing_field: e.to_string(),
                        availability: 0.0,
                    }),
                }
            }
        }
    }

    write_json(&results_dir, "skips.json", &skips, &mut manifest, &root)?;
    let metadata = RunMetadata {
        seed: config.seed,
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        input_sha256: input_hashes(&standardized)?,
        decision_constants: decision_constants(),
    };
    write_json(&results_dir, "metadata.json", &metadata, &mut manifest, &root)?;
    manifest.write(&root)?;

    if non_convergence {
        return Err(ExitKind::NonConvergence(anyhow::anyhow!(
            "one or more fits failed to converge; see results for flags"
        ))
        .into());
    }
    Ok(())
}
