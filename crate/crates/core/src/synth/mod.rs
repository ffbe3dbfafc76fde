//! Model-faithful synthetic data with the generating truth saved alongside,
//! so recovery tests never re-derive what they are checking against.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma, Poisson};
use serde::Serialize;

use crate::disparity::{AgeBin, CountCell};
use crate::error::{Error, Result};
use crate::numerics::RngState;
use crate::records::{Gender, LocationKind, Race, SearchType, StopRecord};
use crate::threshold::{GroupCounts, Period, ThresholdData};

const RACES: [&str; 3] = ["White", "Black", "Hispanic"];

/// Configuration for the threshold-test generator.
#[derive(Debug, Clone)]
pub struct ThresholdSynthConfig {
    pub seed: u64,
    pub n_locations: usize,
    pub stops_per_group: u64,
    /// True thresholds are clamped into this range.
    pub threshold_range: (f64, f64),
    /// When set, generate pre/post periods with every race's post threshold
    /// shifted by this amount.
    pub post_threshold_shift: Option<f64>,
}

impl Default for ThresholdSynthConfig {
    fn default() -> Self {
        ThresholdSynthConfig {
            seed: 1,
            n_locations: 20,
            stops_per_group: 10_000,
            threshold_range: (0.1, 0.3),
            post_threshold_shift: None,
        }
    }
}

/// The generating parameters behind a synthetic threshold dataset.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdTruth {
    pub races: Vec<String>,
    pub locations: Vec<String>,
    /// Race-major (r·D + d) grids.
    pub phi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub threshold: Vec<f64>,
    pub post_threshold_shift: Option<f64>,
}

impl ThresholdTruth {
    fn idx(&self, r: usize, d: usize) -> usize {
        r * self.locations.len() + d
    }

    /// Stop-weighted true aggregate threshold per race (and period), using
    /// each location's total stops in `data` as the weight.
    pub fn race_aggregates(&self, data: &ThresholdData) -> Vec<(String, Option<Period>, f64)> {
        let weights = data.location_stop_totals();
        let total: f64 = weights.iter().sum();
        let periods: Vec<Option<Period>> = if data.has_periods {
            vec![Some(Period::Pre), Some(Period::Post)]
        } else {
            vec![None]
        };
        let mut out = Vec::new();
        for (r, race) in self.races.iter().enumerate() {
            for period in &periods {
                let shift = match period {
                    Some(Period::Post) => self.post_threshold_shift.unwrap_or(0.0),
                    _ => 0.0,
                };
                let mut acc = 0.0;
                for d in 0..self.locations.len() {
                    let loc_idx = data.location_index(&self.locations[d]).expect("location present");
                    acc += weights[loc_idx] * (self.threshold[self.idx(r, d)] + shift);
                }
                out.push((race.clone(), *period, acc / total));
            }
        }
        out
    }
}

/// Simulate one group's stops under the generative process: a signal
/// p ~ beta(φ, λ), a search iff p ≥ t, and a hit with probability p given a
/// search. Returns (searches, hits).
pub fn simulate_group(phi: f64, lambda: f64, t: f64, stops: u64, rng: &mut ChaCha8Rng) -> Result<(u64, u64)> {
    let alpha = phi * lambda;
    let beta = (1.0 - phi) * lambda;
    let dist = BetaDist::new(alpha, beta)
        .map_err(|e| Error::domain(format!("invalid beta shape ({alpha}, {beta}): {e}")))?;
    let mut searches = 0;
    let mut hits = 0;
    for _ in 0..stops {
        let p = dist.sample(rng);
        if p >= t {
            searches += 1;
            if rng.gen::<f64>() < p {
                hits += 1;
            }
        }
    }
    Ok((searches, hits))
}

/// Fresh counts from an existing truth (e.g. a replicate dataset for
/// calibration checks). The grid and stop counts mirror the original draw.
pub fn gen_threshold_from_truth(
    truth: &ThresholdTruth,
    stops_per_group: u64,
    seed: u64,
) -> Result<ThresholdData> {
    let d_count = truth.locations.len();
    let mut groups = Vec::new();
    for (r, race) in truth.races.iter().enumerate() {
        for (d, location) in truth.locations.iter().enumerate() {
            let i = r * d_count + d;
            let periods: Vec<Option<Period>> = match truth.post_threshold_shift {
                Some(_) => vec![Some(Period::Pre), Some(Period::Post)],
                None => vec![None],
            };
            for period in periods {
                let stream = (1 + i * 2 + matches!(period, Some(Period::Post)) as usize) as u64;
                let mut grng = RngState::new(seed, stream).rng();
                let shift = match period {
                    Some(Period::Post) => truth.post_threshold_shift.unwrap_or(0.0),
                    _ => 0.0,
                };
                let t_eff = (truth.threshold[i] + shift).clamp(0.0, 1.0);
                let (searches, hits) =
                    simulate_group(truth.phi[i], truth.lambda[i], t_eff, stops_per_group, &mut grng)?;
                groups.push(GroupCounts {
                    race: race.clone(),
                    location: location.clone(),
                    period,
                    stops: stops_per_group,
                    searches,
                    hits,
                });
            }
        }
    }
    ThresholdData::from_groups(groups)
}

/// Generate a threshold-test dataset from hierarchically drawn truth.
pub fn gen_threshold(config: &ThresholdSynthConfig) -> Result<(ThresholdData, ThresholdTruth)> {
    let (lo, hi) = config.threshold_range;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::validation(format!("bad threshold range ({lo}, {hi})")));
    }
    if config.n_locations == 0 {
        return Err(Error::validation("need at least one location".to_string()));
    }
    let locations: Vec<String> = (0..config.n_locations).map(|d| format!("L{d:03}")).collect();
    let races: Vec<String> = RACES.iter().map(|r| r.to_string()).collect();
    let d_count = locations.len();

    // truth drawn on the model's own hierarchy so recovery is well-specified
    let mut rng = RngState::new(config.seed, 0).rng();
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x as f64).exp());

    let u_race: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.2..-0.6)).collect();
    let v_race: Vec<f64> = (0..3).map(|_| rng.gen_range(4.0_f64.ln()..12.0_f64.ln())).collect();
    let u_loc: Vec<f64> = (0..d_count).map(|_| rng.gen_range(-0.45..0.45)).collect();
    let v_loc: Vec<f64> = (0..d_count).map(|_| rng.gen_range(-0.35..0.35)).collect();
    let span = hi - lo;
    let nu: Vec<f64> = (0..3)
        .map(|_| logit(rng.gen_range(lo + 0.2 * span..hi - 0.2 * span)))
        .collect();

    let mut truth = ThresholdTruth {
        races: races.clone(),
        locations: locations.clone(),
        phi: vec![0.0; 3 * d_count],
        lambda: vec![0.0; 3 * d_count],
        threshold: vec![0.0; 3 * d_count],
        post_threshold_shift: config.post_threshold_shift,
    };
    for r in 0..3 {
        for d in 0..d_count {
            let i = r * d_count + d;
            truth.phi[i] = sigmoid(u_race[r] + u_loc[d]);
            truth.lambda[i] = (v_race[r] + v_loc[d]).exp();
            truth.threshold[i] = sigmoid(nu[r] + rng.gen_range(-0.35..0.35)).clamp(lo, hi);
        }
    }

    let data = gen_threshold_from_truth(&truth, config.stops_per_group, config.seed)?;
    Ok((data, truth))
}

/// Configuration for the count-cell generator.
#[derive(Debug, Clone)]
pub struct CountSynthConfig {
    pub seed: u64,
    pub n_locations: usize,
    pub years: Vec<i32>,
    /// NegBin dispersion; None generates Poisson counts.
    pub phi: Option<f64>,
    pub intercept: f64,
    /// Black, Hispanic (White is the reference).
    pub race_effects: [f64; 2],
    /// 20-29, 30-39, 40-49, 50+ (16-19 is the reference).
    pub age_effects: [f64; 4],
    pub male_effect: f64,
    pub location_effect_range: f64,
    pub year_effect_range: f64,
    pub pop_range: (f64, f64),
}

impl Default for CountSynthConfig {
    fn default() -> Self {
        CountSynthConfig {
            seed: 1,
            n_locations: 30,
            years: vec![2011, 2012, 2013, 2014, 2015],
            phi: Some(4.0),
            intercept: -2.6,
            race_effects: [0.37, -0.40],
            age_effects: [0.65, 0.47, 0.25, -0.53],
            male_effect: 0.72,
            location_effect_range: 0.5,
            year_effect_range: 0.1,
            pop_range: (500.0, 5000.0),
        }
    }
}

/// True coefficients in fitted-contrast form: term name -> value, matching
/// the names a fit of the generated cells produces.
#[derive(Debug, Clone, Serialize)]
pub struct CountTruth {
    pub coefficients: BTreeMap<String, f64>,
    pub phi: Option<f64>,
}

/// Generate count cells y ~ NegBin(pop · exp(linear predictor), φ) over the
/// full (race, age, gender, location, year) grid.
pub fn gen_counts(config: &CountSynthConfig) -> Result<(Vec<CountCell>, CountTruth)> {
    if config.n_locations == 0 || config.years.is_empty() {
        return Err(Error::validation("need locations and years".to_string()));
    }
    if let Some(phi) = config.phi {
        if phi <= 0.0 {
            return Err(Error::validation(format!("phi must be positive, got {phi}")));
        }
    }
    let mut rng = RngState::new(config.seed, 0).rng();
    let locations: Vec<String> = (0..config.n_locations).map(|d| format!("L{d:03}")).collect();
    let loc_effects: Vec<f64> = (0..config.n_locations)
        .map(|_| rng.gen_range(-config.location_effect_range..=config.location_effect_range))
        .collect();
    let year_effects: Vec<f64> = (0..config.years.len())
        .map(|_| rng.gen_range(-config.year_effect_range..=config.year_effect_range))
        .collect();

    // truth in the same contrasts the fit reports (first level is reference)
    let mut coefficients = BTreeMap::new();
    coefficients.insert("(Intercept)".to_string(), config.intercept + loc_effects[0] + year_effects[0]);
    coefficients.insert("race=Black".to_string(), config.race_effects[0]);
    coefficients.insert("race=Hispanic".to_string(), config.race_effects[1]);
    for (i, name) in ["20-29", "30-39", "40-49", "50+"].iter().enumerate() {
        coefficients.insert(format!("age={name}"), config.age_effects[i]);
    }
    coefficients.insert("gender=Male".to_string(), config.male_effect);
    for d in 1..config.n_locations {
        coefficients.insert(format!("location={}", locations[d]), loc_effects[d] - loc_effects[0]);
    }
    for (yi, y) in config.years.iter().enumerate().skip(1) {
        coefficients.insert(format!("year={y}"), year_effects[yi] - year_effects[0]);
    }

    let races = [Race::White, Race::Black, Race::Hispanic];
    let genders = [Gender::Female, Gender::Male];
    let mut cells = Vec::new();
    for (ri, race) in races.iter().enumerate() {
        for (ai, age) in AgeBin::ALL.iter().enumerate() {
            for (gi, gender) in genders.iter().enumerate() {
                for (di, location) in locations.iter().enumerate() {
                    for (yi, year) in config.years.iter().enumerate() {
                        let pop = rng.gen_range(config.pop_range.0..config.pop_range.1).round();
                        let mut lp = config.intercept + loc_effects[di] + year_effects[yi];
                        if ri > 0 {
                            lp += config.race_effects[ri - 1];
                        }
                        if ai > 0 {
                            lp += config.age_effects[ai - 1];
                        }
                        if gi == 1 {
                            lp += config.male_effect;
                        }
                        let mu = pop * lp.exp();
                        let mean = match config.phi {
                            Some(phi) => {
                                let g = Gamma::new(phi, mu / phi)
                                    .map_err(|e| Error::computation(format!("gamma: {e}")))?;
                                g.sample(&mut rng)
                            }
                            None => mu,
                        };
                        let stops = if mean > 0.0 {
                            Poisson::new(mean)
                                .map_err(|e| Error::computation(format!("poisson: {e}")))?
                                .sample(&mut rng) as u64
                        } else {
                            0
                        };
                        cells.push(CountCell {
                            race: *race,
                            age_bin: *age,
                            gender: *gender,
                            location: location.clone(),
                            year: *year,
                            stops,
                            benchmark_pop: pop,
                        });
                    }
                }
            }
        }
    }
    Ok((cells, CountTruth { coefficients, phi: config.phi }))
}

/// Configuration for the stop-level logistic generator.
#[derive(Debug, Clone)]
pub struct BinarySynthConfig {
    pub seed: u64,
    pub states: Vec<String>,
    pub stops_per_state_quarter: u64,
    /// Quarter start dates of the panel.
    pub quarters: Vec<NaiveDate>,
    pub intercept: f64,
    pub state_effect_range: f64,
    /// Black, Hispanic (White is the reference).
    pub race_effects: [f64; 2],
    /// Log-odds change per year.
    pub time_trend: f64,
    pub did: Option<DidInjection>,
}

/// Treatment injection for diff-in-diff recovery tests.
#[derive(Debug, Clone, Serialize)]
pub struct DidInjection {
    pub treated_states: Vec<String>,
    pub legalization_date: NaiveDate,
    /// White, Black, Hispanic treatment log-odds shifts.
    pub alpha: [f64; 3],
}

impl Default for BinarySynthConfig {
    fn default() -> Self {
        BinarySynthConfig {
            seed: 1,
            states: vec!["CO".into(), "WA".into(), "MT".into(), "OH".into(), "TX".into()],
            stops_per_state_quarter: 2000,
            quarters: (0..20u32)
                .map(|q| {
                    NaiveDate::from_ymd_opt(2011 + q as i32 / 4, (q % 4) * 3 + 1, 1)
                        .expect("valid date")
                })
                .collect(),
            intercept: -3.2,
            state_effect_range: 0.4,
            race_effects: [0.6, 0.45],
            time_trend: -0.02,
            did: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BinaryTruth {
    pub intercept: f64,
    pub state_effects: BTreeMap<String, f64>,
    pub race_effects: BTreeMap<String, f64>,
    pub time_trend: f64,
    /// Treatment effects keyed like the fitted terms (`treated=treated:<race>`).
    pub alpha: BTreeMap<String, f64>,
}

/// Generate stop-level records with Bernoulli search outcomes from a logistic
/// model over (state, race, time), optionally with race-specific treatment
/// effects after a legalization date in the treated states.
pub fn gen_binary(config: &BinarySynthConfig) -> Result<(Vec<StopRecord>, BinaryTruth)> {
    if config.states.is_empty() || config.quarters.is_empty() {
        return Err(Error::validation("need states and quarters".to_string()));
    }
    let mut rng = RngState::new(config.seed, 0).rng();
    let state_effects: BTreeMap<String, f64> = config
        .states
        .iter()
        .map(|s| (s.clone(), rng.gen_range(-config.state_effect_range..=config.state_effect_range)))
        .collect();

    let mut records = Vec::new();
    for (si, state) in config.states.iter().enumerate() {
        let mut srng = RngState::new(config.seed, 100 + si as u64).rng();
        for quarter in &config.quarters {
            for _ in 0..config.stops_per_state_quarter {
                let race = match srng.gen_range(0..3u8) {
                    0 => Race::White,
                    1 => Race::Black,
                    _ => Race::Hispanic,
                };
                let day_offset = srng.gen_range(0..90i64);
                let date = *quarter + chrono::Duration::days(day_offset);
                let mut lp = config.intercept + state_effects[state];
                lp += match race {
                    Race::Black => config.race_effects[0],
                    Race::Hispanic => config.race_effects[1],
                    _ => 0.0,
                };
                let mut reference = config.quarters[0];
                if let Some(did) = &config.did {
                    reference = did.legalization_date;
                    if did.treated_states.iter().any(|s| s == state) && date >= did.legalization_date {
                        lp += match race {
                            Race::White => did.alpha[0],
                            Race::Black => did.alpha[1],
                            _ => did.alpha[2],
                        };
                    }
                }
                let t_years = (date - reference).num_days() as f64 / 365.25;
                lp += config.time_trend * t_years;
                let p = 1.0 / (1.0 + (-lp).exp());
                let searched = srng.gen::<f64>() < p;
                records.push(StopRecord {
                    state: state.clone(),
                    stop_date: Some(date),
                    stop_time: Some(720),
                    location: Some(format!("{state}-01")),
                    location_kind: LocationKind::County,
                    driver_race: race,
                    driver_gender: Gender::Male,
                    driver_age: Some(30),
                    violations: vec!["speeding".to_string()],
                    stop_purpose: Some("speeding".to_string()),
                    search_conducted: Some(searched),
                    search_types: if searched { vec![SearchType::ProbableCause] } else { vec![] },
                    contraband_found: if searched { Some(srng.gen::<f64>() < 0.25) } else { None },
                    outcome: None,
                    extras: Default::default(),
                });
            }
        }
    }

    let truth = BinaryTruth {
        intercept: config.intercept,
        state_effects,
        race_effects: BTreeMap::from([
            ("race=Black".to_string(), config.race_effects[0]),
            ("race=Hispanic".to_string(), config.race_effects[1]),
        ]),
        time_trend: config.time_trend,
        alpha: match &config.did {
            Some(did) => BTreeMap::from([
                ("treated=treated:White".to_string(), did.alpha[0]),
                ("treated=treated:Black".to_string(), did.alpha[1]),
                ("treated=treated:Hispanic".to_string(), did.alpha[2]),
            ]),
            None => BTreeMap::new(),
        },
    };
    Ok((records, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{beta_tail_mean, BetaShape};

    #[test]
    fn fixed_seed_reproduces_datasets() {
        let config = ThresholdSynthConfig { n_locations: 3, stops_per_group: 500, ..Default::default() };
        let (a, ta) = gen_threshold(&config).unwrap();
        let (b, tb) = gen_threshold(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.threshold, tb.threshold);
        let (c, _) = gen_threshold(&ThresholdSynthConfig { seed: 2, ..config }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn threshold_boundaries() {
        let mut rng = RngState::new(7, 0).rng();
        let (s0, _) = simulate_group(0.3, 5.0, 0.0, 200, &mut rng).unwrap();
        assert_eq!(s0, 200, "threshold 0 searches everyone");
        let (s1, h1) = simulate_group(0.3, 5.0, 1.0, 200, &mut rng).unwrap();
        assert_eq!((s1, h1), (0, 0), "threshold 1 searches no one");
    }

    #[test]
    fn group_moments_match_analytic_rates() {
        let (phi, lambda, t) = (0.3, 5.0, 0.2);
        let n = 1_000_000u64;
        let mut rng = RngState::new(11, 0).rng();
        let (searches, hits) = simulate_group(phi, lambda, t, n, &mut rng).unwrap();
        let tail = beta_tail_mean(BetaShape::new(phi, lambda).unwrap(), t).unwrap();
        let s_rate = searches as f64 / n as f64;
        let s_se = (tail.search_rate * (1.0 - tail.search_rate) / n as f64).sqrt();
        assert!(
            (s_rate - tail.search_rate).abs() < 3.0 * s_se,
            "search rate {s_rate} vs {}",
            tail.search_rate
        );
        let h_rate = hits as f64 / searches as f64;
        let h_se = (tail.hit_rate * (1.0 - tail.hit_rate) / searches as f64).sqrt();
        assert!((h_rate - tail.hit_rate).abs() < 3.0 * h_se, "hit rate {h_rate} vs {}", tail.hit_rate);
    }

    #[test]
    fn count_truth_matches_contrast_names() {
        let config = CountSynthConfig { n_locations: 3, years: vec![2012, 2013], ..Default::default() };
        let (cells, truth) = gen_counts(&config).unwrap();
        assert_eq!(cells.len(), 3 * 5 * 2 * 3 * 2);
        assert!(truth.coefficients.contains_key("race=Black"));
        assert!(truth.coefficients.contains_key("location=L002"));
        assert!(truth.coefficients.contains_key("year=2013"));
        assert!(!truth.coefficients.contains_key("location=L000"), "reference has no contrast");
    }

    #[test]
    fn poisson_limit_and_overdispersion_moments() {
        // constant linear predictor: every cell shares one mean
        let base = CountSynthConfig {
            n_locations: 40,
            years: (0..25).map(|i| 2000 + i).collect(),
            race_effects: [0.0, 0.0],
            age_effects: [0.0; 4],
            male_effect: 0.0,
            location_effect_range: 0.0,
            year_effect_range: 0.0,
            pop_range: (1000.0, 1000.0001),
            intercept: -2.0,
            ..Default::default()
        };
        let expected_mean = 1000.0 * (-2.0_f64).exp();

        // phi = 4: Var/mean = 1 + mean/4
        let (cells, _) = gen_counts(&CountSynthConfig { phi: Some(4.0), ..base.clone() }).unwrap();
        let xs: Vec<f64> = cells.iter().map(|c| c.stops as f64).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected_ratio = 1.0 + expected_mean / 4.0;
        assert!(
            ((var / mean) / expected_ratio - 1.0).abs() < 0.1,
            "var/mean {} vs {}",
            var / mean,
            expected_ratio
        );
        assert!((mean / expected_mean - 1.0).abs() < 0.05, "mean {mean} vs {expected_mean}");

        // Poisson limit: Var ~ mean
        let (cells, _) = gen_counts(&CountSynthConfig { phi: None, ..base }).unwrap();
        let xs: Vec<f64> = cells.iter().map(|c| c.stops as f64).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / mean - 1.0).abs() < 0.1, "poisson var/mean {}", var / mean);
    }

    #[test]
    fn binary_intercept_only_is_balanced() {
        let config = BinarySynthConfig {
            states: vec!["MT".into()],
            stops_per_state_quarter: 50_000,
            quarters: vec![NaiveDate::from_ymd_opt(2012, 1, 1).unwrap()],
            intercept: 0.0,
            state_effect_range: 0.0,
            race_effects: [0.0, 0.0],
            time_trend: 0.0,
            ..Default::default()
        };
        let (records, _) = gen_binary(&config).unwrap();
        let searched = records.iter().filter(|r| r.search_conducted == Some(true)).count() as f64;
        let frac = searched / records.len() as f64;
        assert!((frac - 0.5).abs() < 0.01, "positive fraction {frac}");
    }

    #[test]
    fn binary_race_effect_reproduces_odds_ratio() {
        let config = BinarySynthConfig {
            states: vec!["MT".into()],
            stops_per_state_quarter: 1_000_000,
            quarters: vec![NaiveDate::from_ymd_opt(2012, 1, 1).unwrap()],
            intercept: -1.0,
            state_effect_range: 0.0,
            race_effects: [2.0_f64.ln(), 0.0],
            time_trend: 0.0,
            ..Default::default()
        };
        let (records, _) = gen_binary(&config).unwrap();
        let odds = |race: Race| -> f64 {
            let (mut s, mut n) = (0.0f64, 0.0f64);
            for r in records.iter().filter(|r| r.driver_race == race) {
                n += 1.0;
                if r.search_conducted == Some(true) {
                    s += 1.0;
                }
            }
            (s / n) / (1.0 - s / n)
        };
        let or = odds(Race::Black) / odds(Race::White);
        assert!((or - 2.0).abs() < 0.05, "odds ratio {or}");
    }
}
