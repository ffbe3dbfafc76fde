//! Pipeline configuration: a flat key-value file, no code execution.
//!
//! ```text
//! seed = 42
//! output_dir = out
//!
//! state.CO.input = data/co.csv
//! state.CO.schema = schemas/co.schema
//! state.CO.locations = ref/co_locations.csv
//! state.CO.violations = ref/co_violations.csv
//!
//! surname_file = ref/surnames.csv
//! reclassify_states = TX
//! census_file = ref/census.csv
//! error_rate_bound = 0.05
//!
//! analyses = outcome_test,stop_rate,poststop,threshold,policy
//! stop_rate.family = negbin
//! poststop.outcome = search
//! poststop.controls = race_location_time_demo
//! threshold.min_stops = 1000
//! threshold.max_locations = 100
//! threshold.chains = 5
//! threshold.warmup = 2500
//! threshold.draws = 2500
//! policy.control_states = MT,OH,TX
//! policy.legalization_date = 2012-12-10
//! fig2.min_stops = 0
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use stopstat::glm::Family;
use stopstat::records::schema::parse_flat_kv;

#[derive(Debug, Clone)]
pub struct StateInput {
    pub state: String,
    pub input: PathBuf,
    pub schema: PathBuf,
    pub locations: Option<PathBuf>,
    pub violations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Analysis {
    OutcomeTest,
    StopRate,
    PostStop,
    Threshold,
    Policy,
}

impl Analysis {
    fn parse(s: &str) -> Result<Analysis> {
        Ok(match s {
            "outcome_test" => Analysis::OutcomeTest,
            "stop_rate" => Analysis::StopRate,
            "poststop" => Analysis::PostStop,
            "threshold" => Analysis::Threshold,
            "policy" => Analysis::Policy,
            other => bail!("unknown analysis '{other}'"),
        })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub states: Vec<StateInput>,
    pub surname_file: Option<PathBuf>,
    pub reclassify_states: Vec<String>,
    pub census_file: Option<PathBuf>,
    /// Normalization fails (exit 3) when any state's error-sink rate exceeds this.
    pub error_rate_bound: f64,
    pub analyses: Vec<Analysis>,
    pub stop_rate_family: Family,
    pub poststop_outcome: String,
    pub poststop_controls: String,
    pub threshold_min_stops: u64,
    pub threshold_max_locations: usize,
    pub threshold_chains: usize,
    pub threshold_warmup: usize,
    pub threshold_draws: usize,
    pub policy_control_states: Vec<String>,
    pub policy_legalization_date: chrono::NaiveDate,
    pub fig2_min_stops: u64,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<PipelineConfig> {
        let entries = parse_flat_kv(text).map_err(|e| anyhow::anyhow!("{e}"))?;
        let mut config = PipelineConfig {
            seed: 1,
            output_dir: base.join("out"),
            states: Vec::new(),
            surname_file: None,
            reclassify_states: Vec::new(),
            census_file: None,
            error_rate_bound: 0.05,
            analyses: Vec::new(),
            stop_rate_family: Family::NegBin,
            poststop_outcome: "search".to_string(),
            poststop_controls: "race_location_time_demo".to_string(),
            threshold_min_stops: 1000,
            threshold_max_locations: 100,
            threshold_chains: 5,
            threshold_warmup: 2500,
            threshold_draws: 2500,
            policy_control_states: Vec::new(),
            policy_legalization_date: chrono::NaiveDate::from_ymd_opt(2012, 12, 10).unwrap(),
            fig2_min_stops: 0,
        };
        let mut state_keys: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();

        for (key, value) in entries {
            match key.as_str() {
                "seed" => config.seed = value.parse().context("seed")?,
                "output_dir" => config.output_dir = base.join(&value),
                "surname_file" => config.surname_file = Some(base.join(&value)),
                "reclassify_states" => {
                    config.reclassify_states = split_list(&value);
                }
                "census_file" => config.census_file = Some(base.join(&value)),
                "error_rate_bound" => config.error_rate_bound = value.parse().context("error_rate_bound")?,
                "analyses" => {
                    config.analyses =
                        split_list(&value).iter().map(|s| Analysis::parse(s)).collect::<Result<_>>()?;
                }
                "stop_rate.family" => {
                    config.stop_rate_family = match value.as_str() {
                        "negbin" => Family::NegBin,
                        "poisson" => Family::Poisson,
                        "quasipoisson" => Family::QuasiPoisson,
                        other => bail!("unknown stop_rate.family '{other}'"),
                    };
                }
                "poststop.outcome" => config.poststop_outcome = value,
                "poststop.controls" => config.poststop_controls = value,
                "threshold.min_stops" => config.threshold_min_stops = value.parse().context("threshold.min_stops")?,
                "threshold.max_locations" => {
                    config.threshold_max_locations = value.parse().context("threshold.max_locations")?
                }
                "threshold.chains" => config.threshold_chains = value.parse().context("threshold.chains")?,
                "threshold.warmup" => config.threshold_warmup = value.parse().context("threshold.warmup")?,
                "threshold.draws" => config.threshold_draws = value.parse().context("threshold.draws")?,
                "policy.control_states" => config.policy_control_states = split_list(&value),
                "policy.legalization_date" => {
                    config.policy_legalization_date =
                        chrono::NaiveDate::parse_from_str(&value, "%Y-%m-%d")
                            .context("policy.legalization_date")?
                }
                "fig2.min_stops" => config.fig2_min_stops = value.parse().context("fig2.min_stops")?,
                other => {
                    if let Some(rest) = other.strip_prefix("state.") {
                        let Some((state, field)) = rest.split_once('.') else {
                            bail!("state keys use the form state.<ST>.<field>, got '{other}'");
                        };
                        state_keys.entry(state.to_string()).or_default().insert(field.to_string(), value);
                    } else {
                        bail!("unknown config key '{other}'");
                    }
                }
            }
        }

        for (state, fields) in state_keys {
            let input = fields.get("input").with_context(|| format!("state.{state}.input missing"))?;
            let schema = fields.get("schema").with_context(|| format!("state.{state}.schema missing"))?;
            config.states.push(StateInput {
                state: state.clone(),
                input: base.join(input),
                schema: base.join(schema),
                locations: fields.get("locations").map(|p| base.join(p)),
                violations: fields.get("violations").map(|p| base.join(p)),
            });
        }

        Ok(config)
    }

    /// Check that every referenced path exists.
    pub fn validate_paths(&self, need_inputs: bool) -> Result<()> {
        let check = |p: &Path| -> Result<()> {
            if !p.exists() {
                bail!("configured path does not exist: {}", p.display());
            }
            Ok(())
        };
        if need_inputs {
            for s in &self.states {
                check(&s.input)?;
                check(&s.schema)?;
                if let Some(p) = &s.locations {
                    check(p)?;
                }
                if let Some(p) = &s.violations {
                    check(p)?;
                }
            }
            if let Some(p) = &self.surname_file {
                check(p)?;
            }
        }
        if let Some(p) = &self.census_file {
            check(p)?;
        }
        Ok(())
    }
}

fn split_list(value: &str) -> Vec<String> {
    value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}
