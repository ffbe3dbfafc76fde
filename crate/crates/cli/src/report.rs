//! `stopstat report`: project analysis results into per-figure CSV plot data
//! and a human-readable summary.

use std::path::Path;

use anyhow::{Context, Result};
use serde_json::Value;

use crate::config::PipelineConfig;
use crate::manifest::Manifest;
use crate::ExitKind;

fn load_json(dir: &Path, name: &str) -> Option<Value> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn field(v: &Value, key: &str) -> String {
    fmt(v.get(key).unwrap_or(&Value::Null))
}

pub fn run(config: &PipelineConfig) -> Result<()> {
    let results = config.output_dir.join("results");
    if !results.exists() {
        return Err(ExitKind::validation(anyhow::anyhow!(
            "no results under {}; run analyze first",
            results.display()
        ))
        .into());
    }
    let report_dir = config.output_dir.join("report");
    std::fs::create_dir_all(&report_dir)?;
    let mut manifest = Manifest::default();
    let mut summary = String::from("# Analysis summary\n\n");
    let mut emitted: Vec<std::path::PathBuf> = Vec::new();

    // stops per driving-age resident by race and location
    if let Some(points) = load_json(&results, "stop_rate_points.json") {
        let rows: Vec<Vec<String>> = points
            .as_array()
            .unwrap_or(&vec![])
            .iter()
            .map(|p| {
                vec![field(p, "race"), field(p, "location"), field(p, "stops"), field(p, "population"), field(p, "rate")]
            })
            .collect();
        let path = report_dir.join("stop_rates_by_location.csv");
        write_csv(&path, &["race", "location", "stops", "population", "rate"], &rows)?;
        emitted.push(path);
    }

    if let Some(stop_rate) = load_json(&results, "stop_rate.json") {
        let fit = &stop_rate["fit"];
        summary.push_str("## Stop rates\n\n");
        summary.push_str(&format!(
            "- family: {}, converged: {}, dispersion: {}\n",
            field(&stop_rate, "family"),
            field(fit, "converged"),
            field(fit, "dispersion"),
        ));
        if let (Some(terms), Some(coefs), Some(ses)) = (
            fit["terms"].as_array(),
            fit["coefficients"].as_array(),
            fit["std_errors"].as_array(),
        ) {
            let mut rows = Vec::new();
            for ((term, coef), se) in terms.iter().zip(coefs).zip(ses) {
                let name = term_name(term);
                if name.starts_with("race=") {
                    summary.push_str(&format!(
                        "- {name}: {:.3} ({:.3})\n",
                        coef.as_f64().unwrap_or(f64::NAN),
                        se.as_f64().unwrap_or(f64::NAN)
                    ));
                }
                rows.push(vec![name, fmt(coef), fmt(se)]);
            }
            let path = report_dir.join("stop_rate_coefficients.csv");
            write_csv(&path, &["term", "coefficient", "std_error"], &rows)?;
            emitted.push(path);
        }
        summary.push('\n');
    }

    // hit rates by race and location plus the aggregate
    if let Some(outcome) = load_json(&results, "outcome_test.json") {
        let mut rows = Vec::new();
        for row in outcome["by_location"].as_array().unwrap_or(&vec![]) {
            rows.push(vec![
                field(row, "race"),
                field(row, "location"),
                field(row, "searches"),
                field(row, "hits"),
                field(row, "hit_rate"),
            ]);
        }
        let path = report_dir.join("hit_rates_by_location.csv");
        write_csv(&path, &["race", "location", "searches", "hits", "hit_rate"], &rows)?;
        emitted.push(path);

        summary.push_str("## Outcome test (aggregate hit rates)\n\n");
        for row in outcome["aggregate"].as_array().unwrap_or(&vec![]) {
            if let Some(rate) = row["hit_rate"].as_f64() {
                summary.push_str(&format!(
                    "- {}: {:.1}% ({} searches)\n",
                    field(row, "race"),
                    rate * 100.0,
                    field(row, "searches")
                ));
            }
        }
        summary.push('\n');
    }

    // inferred thresholds: per-group scatter data and aggregates
    if let Some(thr) = load_json(&results, "threshold_summary.json") {
        let mut rows = Vec::new();
        for g in thr["groups"].as_array().unwrap_or(&vec![]) {
            rows.push(vec![
                field(g, "race"),
                field(g, "location"),
                field(g, "period"),
                field(g, "stops"),
                field(g, "mean"),
                field(g, "lo95"),
                field(g, "hi95"),
            ]);
        }
        let path = report_dir.join("thresholds_by_location.csv");
        write_csv(&path, &["race", "location", "period", "stops", "mean", "lo95", "hi95"], &rows)?;
        emitted.push(path);

        summary.push_str("## Threshold test\n\n");
        summary.push_str(&format!(
            "- converged: {} (max R-hat {}), divergences: {}\n",
            field(&thr, "converged"),
            field(&thr, "max_rhat"),
            field(&thr, "divergences"),
        ));
        for agg in thr["aggregates"].as_array().unwrap_or(&vec![]) {
            let (mean, lo, hi) = (
                agg["mean"].as_f64().unwrap_or(f64::NAN),
                agg["lo95"].as_f64().unwrap_or(f64::NAN),
                agg["hi95"].as_f64().unwrap_or(f64::NAN),
            );
            let period = field(agg, "period");
            let period = if period.is_empty() { String::new() } else { format!(" [{period}]") };
            summary.push_str(&format!(
                "- {}{period}: {:.1}% (95% CI {:.1}-{:.1}%)\n",
                field(agg, "race"),
                mean * 100.0,
                lo * 100.0,
                hi * 100.0
            ));
        }
        summary.push('\n');

        let mut agg_rows = Vec::new();
        for agg in thr["aggregates"].as_array().unwrap_or(&vec![]) {
            agg_rows.push(vec![
                field(agg, "race"),
                field(agg, "period"),
                field(agg, "mean"),
                field(agg, "lo95"),
                field(agg, "hi95"),
            ]);
        }
        let path = report_dir.join("threshold_aggregates.csv");
        write_csv(&path, &["race", "period", "mean", "lo95", "hi95"], &agg_rows)?;
        emitted.push(path);
    }

    // posterior predictive check scatter
    if let Some(ppc) = load_json(&results, "threshold_ppc.json") {
        let mut rows = Vec::new();
        for g in ppc.as_array().unwrap_or(&vec![]) {
            rows.push(vec![
                field(g, "race"),
                field(g, "location"),
                field(g, "stops"),
                field(g, "observed_search_rate"),
                field(g, "predicted_search_rate"),
                field(g, "observed_hit_rate"),
                field(g, "predicted_hit_rate"),
            ]);
        }
        let path = report_dir.join("ppc_rates.csv");
        write_csv(
            &path,
            &[
                "race",
                "location",
                "stops",
                "observed_search_rate",
                "predicted_search_rate",
                "observed_hit_rate",
                "predicted_hit_rate",
            ],
            &rows,
        )?;
        emitted.push(path);
    }

    // quarterly trend series and fitted pre/post lines
    if let Some(trends) = load_json(&results, "policy_trends.json") {
        let mut rows = Vec::new();
        for p in trends["points"].as_array().unwrap_or(&vec![]) {
            rows.push(vec![
                field(p, "state"),
                field(p, "race"),
                field(p, "quarter"),
                field(p, "stops"),
                field(p, "outcomes"),
                field(p, "rate"),
            ]);
        }
        let path = report_dir.join("trend_quarterly_rates.csv");
        write_csv(&path, &["state", "race", "quarter", "stops", "outcomes", "rate"], &rows)?;
        emitted.push(path);

        let mut line_rows = Vec::new();
        for l in trends["lines"].as_array().unwrap_or(&vec![]) {
            line_rows.push(vec![
                field(l, "state"),
                field(l, "race"),
                field(l, "period"),
                field(l, "intercept"),
                field(l, "slope"),
                field(l, "slope_se"),
                field(l, "n_quarters"),
            ]);
        }
        let path = report_dir.join("trend_lines.csv");
        write_csv(
            &path,
            &["state", "race", "period", "intercept", "slope", "slope_se", "n_quarters"],
            &line_rows,
        )?;
        emitted.push(path);
    }

    if let Some(did) = load_json(&results, "policy_did.json") {
        summary.push_str("## Marijuana-legalization diff-in-diff\n\n");
        let fit = &did["fit"];
        if let (Some(terms), Some(coefs), Some(ses)) = (
            fit["terms"].as_array(),
            fit["coefficients"].as_array(),
            fit["std_errors"].as_array(),
        ) {
            let mut rows = Vec::new();
            for ((term, coef), se) in terms.iter().zip(coefs).zip(ses) {
                let name = term_name(term);
                if name.starts_with("treated=treated:") || name == "years_since_legalization" || name.starts_with("race=") {
                    summary.push_str(&format!(
                        "- {name}: {:.3} ({:.3})\n",
                        coef.as_f64().unwrap_or(f64::NAN),
                        se.as_f64().unwrap_or(f64::NAN)
                    ));
                }
                rows.push(vec![name, fmt(coef), fmt(se)]);
            }
            let path = report_dir.join("did_coefficients.csv");
            write_csv(&path, &["term", "coefficient", "std_error"], &rows)?;
            emitted.push(path);
        }
        summary.push('\n');
    }

    if let Some(delta) = load_json(&results, "policy_innocent_delta.json") {
        if let Some(v) = delta["relative_change"].as_f64() {
            summary.push_str(&format!(
                "Fruitless searches changed by {:.0}% year-over-year around legalization.\n\n",
                v * 100.0
            ));
        }
    }

    let summary_path = report_dir.join("summary.md");
    std::fs::write(&summary_path, &summary)?;
    emitted.push(summary_path);

    for path in &emitted {
        manifest.add(&config.output_dir, path)?;
    }
    manifest.write(&config.output_dir)?;
    Manifest::verify(&config.output_dir).map_err(ExitKind::validation)?;
    eprintln!("report: {} files under {}", emitted.len(), report_dir.display());
    Ok(())
}

fn term_name(term: &Value) -> String {
    if term.as_str() == Some("Intercept") {
        return "(Intercept)".to_string();
    }
    if let Some(obj) = term.as_object() {
        if let Some(fl) = obj.get("FactorLevel") {
            return format!("{}={}", field(fl, "factor"), field(fl, "level"));
        }
        if let Some(cov) = obj.get("Covariate") {
            return field(cov, "name");
        }
    }
    fmt(term)
}
