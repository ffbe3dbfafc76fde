//! Batch CLI over the stopstat toolkit.
//!
//! Exit codes: 0 success, 2 validation failure, 3 data-quality bound
//! exceeded, 4 non-convergence.

mod analyze;
mod config;
mod manifest;
mod normalize;
mod report;
mod synthcmd;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::PipelineConfig;

/// Wrapper that maps failures onto the documented exit codes.
#[derive(Debug)]
pub enum ExitKind {
    Validation(anyhow::Error),
    DataQuality(anyhow::Error),
    NonConvergence(anyhow::Error),
}

impl ExitKind {
    pub fn validation(err: impl Into<anyhow::Error>) -> ExitKind {
        ExitKind::Validation(err.into())
    }

    fn code(&self) -> u8 {
        match self {
            ExitKind::Validation(_) => 2,
            ExitKind::DataQuality(_) => 3,
            ExitKind::NonConvergence(_) => 4,
        }
    }
}

impl std::fmt::Display for ExitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExitKind::Validation(e) => write!(f, "validation: {e}"),
            ExitKind::DataQuality(e) => write!(f, "data quality: {e}"),
            ExitKind::NonConvergence(e) => write!(f, "non-convergence: {e}"),
        }
    }
}

impl std::error::Error for ExitKind {}

#[derive(Parser)]
#[command(name = "stopstat", about = "Traffic-stop disparity analysis pipelines", version)]
struct Cli {
    /// Pipeline config file (flat key = value format).
    #[arg(short, long, global = true, default_value = "stopstat.conf")]
    config: PathBuf,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Standardize raw state exports and write audit reports.
    Normalize,
    /// Run the configured analyses over standardized records.
    Analyze {
        /// Run only these analyses (comma-separated), overriding the config.
        #[arg(long)]
        only: Option<String>,
    },
    /// Emit plot-data CSVs and a markdown summary from analysis results.
    Report,
    /// Generate a synthetic bundle: threshold, counts, or records.
    Synth {
        #[arg(default_value = "threshold")]
        kind: String,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&cli.config).map_err(ExitKind::validation)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::Normalize => normalize::run(&config),
        Command::Analyze { only } => {
            if let Some(only) = only {
                let text = format!("analyses = {only}");
                let parsed = PipelineConfig::parse(
                    &format!("{text}\n"),
                    config.output_dir.parent().unwrap_or(std::path::Path::new(".")),
                )
                .map_err(ExitKind::validation)?;
                config.analyses = parsed.analyses;
            }
            analyze::run(&config)
        }
        Command::Report => report::run(&config),
        Command::Synth { kind } => synthcmd::run(&config, kind),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<ExitKind>().map(ExitKind::code).unwrap_or(2);
            ExitCode::from(code)
        }
    }
}
