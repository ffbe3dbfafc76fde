//! `stopstat synth`: generate synthetic bundles in the same formats the
//! analysis pipeline consumes, with truth records saved alongside.

use anyhow::Result;
use stopstat::records::write_standardized;
use stopstat::synth::{gen_binary, gen_counts, gen_threshold, BinarySynthConfig, CountSynthConfig, ThresholdSynthConfig};

use crate::config::PipelineConfig;
use crate::manifest::Manifest;

pub fn run(config: &PipelineConfig, kind: &str) -> Result<()> {
    let dir = config.output_dir.join("synth");
    std::fs::create_dir_all(&dir)?;
    let mut manifest = Manifest::default();

    match kind {
        "threshold" => {
            let synth_config = ThresholdSynthConfig { seed: config.seed, ..Default::default() };
            let (data, truth) = gen_threshold(&synth_config).map_err(crate::ExitKind::validation)?;
            let counts_path = dir.join("threshold_counts.csv");
            data.write_csv(std::fs::File::create(&counts_path)?).map_err(anyhow::Error::from)?;
            manifest.add(&config.output_dir, &counts_path)?;
            let truth_path = dir.join("threshold_truth.json");
            std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)?;
            manifest.add(&config.output_dir, &truth_path)?;
        }
        "counts" => {
            let synth_config = CountSynthConfig { seed: config.seed, ..Default::default() };
            let (cells, truth) = gen_counts(&synth_config).map_err(crate::ExitKind::validation)?;
            let cells_path = dir.join("count_cells.csv");
            let mut w = csv::Writer::from_path(&cells_path)?;
            w.write_record(["race", "age_bin", "gender", "location", "year", "stops", "population"])?;
            for c in &cells {
                w.write_record(&[
                    c.race.as_str().to_string(),
                    c.age_bin.as_str().to_string(),
                    c.gender.as_str().to_string(),
                    c.location.clone(),
                    c.year.to_string(),
                    c.stops.to_string(),
                    c.benchmark_pop.to_string(),
                ])?;
            }
            w.flush()?;
            manifest.add(&config.output_dir, &cells_path)?;
            let truth_path = dir.join("count_truth.json");
            std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)?;
            manifest.add(&config.output_dir, &truth_path)?;
        }
        "records" => {
            let synth_config = BinarySynthConfig { seed: config.seed, ..Default::default() };
            let (records, truth) = gen_binary(&synth_config).map_err(crate::ExitKind::validation)?;
            let records_path = dir.join("records.csv");
            write_standardized(&records, std::fs::File::create(&records_path)?)
                .map_err(anyhow::Error::from)?;
            manifest.add(&config.output_dir, &records_path)?;
            let truth_path = dir.join("records_truth.json");
            std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)?;
            manifest.add(&config.output_dir, &truth_path)?;
        }
        other => {
            return Err(crate::ExitKind::validation(anyhow::anyhow!(
                "unknown synth kind '{other}'; expected threshold, counts, or records"
            ))
            .into())
        }
    }
    manifest.write(&config.output_dir)?;
    eprintln!("synth {kind}: wrote bundle under {}", dir.display());
    Ok(())
}
