//! `stopstat normalize`: raw exports -> standardized records + audit reports.

use std::collections::BTreeSet;

use anyhow::{Context, Result};
use stopstat::records::{run_pipeline, write_standardized, RefTables, StateSchema, SurnameTable};

use crate::config::PipelineConfig;
use crate::manifest::Manifest;
use crate::ExitKind;

pub fn run(config: &PipelineConfig) -> Result<()> {
    config.validate_paths(true).map_err(ExitKind::validation)?;
    if config.states.is_empty() {
        return Err(ExitKind::validation(anyhow::anyhow!("no states configured")).into());
    }

    let out_dir = config.output_dir.join("standardized");
    let audit_dir = config.output_dir.join("audit");
    std::fs::create_dir_all(&out_dir)?;
    std::fs::create_dir_all(&audit_dir)?;

    let surnames = match &config.surname_file {
        Some(path) => {
            let file = std::fs::File::open(path)?;
            Some(SurnameTable::from_csv(file).map_err(ExitKind::validation)?)
        }
        None => None,
    };
    let reclassify: BTreeSet<String> = config.reclassify_states.iter().cloned().collect();

    let mut manifest = Manifest::default();
    let mut quality_failures = Vec::new();
    for state in &config.states {
        let schema = StateSchema::from_file(&state.schema).map_err(ExitKind::validation)?;
        if schema.state != state.state {
            return Err(ExitKind::validation(anyhow::anyhow!(
                "schema {} declares state {}, config says {}",
                state.schema.display(),
                schema.state,
                state.state
            ))
            .into());
        }
        let mut tables = RefTables::default();
        if let Some(p) = &state.locations {
            tables.locations = RefTables::load_lookup(p).map_err(ExitKind::validation)?;
        }
        if let Some(p) = &state.violations {
            tables.violations = RefTables::load_lookup(p).map_err(ExitKind::validation)?;
        }

        let input = std::fs::File::open(&state.input)
            .with_context(|| format!("opening {}", state.input.display()))?;
        let (records, audit) =
            run_pipeline(input, &schema, &tables, surnames.as_ref(), &reclassify)
                .map_err(ExitKind::validation)?;

        let out_path = out_dir.join(format!("{}.csv", state.state));
        let file = std::fs::File::create(&out_path)?;
        write_standardized(&records, file).map_err(anyhow::Error::from)?;
        manifest.add(&config.output_dir, &out_path)?;

        let audit_path = audit_dir.join(format!("{}.audit.json", state.state));
        std::fs::write(&audit_path, serde_json::to_string_pretty(&audit)?)?;
        manifest.add(&config.output_dir, &audit_path)?;

        let error_rate = if audit.input_rows > 0 {
            audit.error_rows as f64 / audit.input_rows as f64
        } else {
            0.0
        };
        eprintln!(
            "{}: {} rows in, {} standardized, {} errors, {} duplicates removed, {} relabeled",
            state.state,
            audit.input_rows,
            audit.output_records,
            audit.error_rows,
            audit.duplicates_removed,
            audit.hispanic_relabeled
        );
        if !audit.conservation_holds() {
            return Err(ExitKind::validation(anyhow::anyhow!(
                "audit conservation violated for {}",
                state.state
            ))
            .into());
        }
        if error_rate > config.error_rate_bound {
            quality_failures.push(format!(
                "{}: error rate {:.3} exceeds bound {:.3}",
                state.state, error_rate, config.error_rate_bound
            ));
        }
    }

    manifest.write(&config.output_dir)?;
    if !quality_failures.is_empty() {
        return Err(ExitKind::DataQuality(anyhow::anyhow!(quality_failures.join("; "))).into());
    }
    Ok(())
}

/// All standardized files present in the output directory.
pub fn list_standardized(config: &PipelineConfig) -> Result<Vec<(String, std::path::PathBuf)>> {
    let dir = config.output_dir.join("standardized");
    let mut out = Vec::new();
    if dir.exists() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().map(|e| e == "csv").unwrap_or(false) {
                let state = path.file_stem().unwrap().to_string_lossy().to_string();
                out.push((state, path));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_all_standardized(paths: &[(String, std::path::PathBuf)]) -> Result<Vec<stopstat::records::StopRecord>> {
    let mut records = Vec::new();
    for (_, path) in paths {
        let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        records.extend(stopstat::records::read_standardized(file).map_err(ExitKind::validation)?);
    }
    Ok(records)
}

/// Hash the inputs an analysis consumed, for the result metadata.
pub fn input_hashes(paths: &[(String, std::path::PathBuf)]) -> Result<std::collections::BTreeMap<String, String>> {
    let mut out = std::collections::BTreeMap::new();
    for (state, path) in paths {
        out.insert(state.clone(), crate::manifest::sha256_file(path)?);
    }
    Ok(out)
}
