//! Fitting the threshold test and summarizing its posterior.

use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{max_rhat, nuts_sample, rhat, NutsConfig, PosteriorDraws};
use crate::numerics::{beta_tail_mean, BetaShape, RngState};
use crate::threshold::data::{Period, ThresholdData};
use crate::threshold::model::ThresholdModel;

/// Sampler settings; the defaults are 5 chains of 2,500 warmup + 2,500 draws.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub check_gradient: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            chains: 5,
            warmup: 2500,
            draws: 2500,
            seed: 1,
            target_accept: 0.8,
            max_tree_depth: 10,
            check_gradient: true,
        }
    }
}

/// R-hat convergence bar for the "converged" verdict.
pub const RHAT_BOUND: f64 = 1.05;

#[derive(Debug, Clone, Serialize)]
pub struct GroupThreshold {
    pub race: String,
    pub location: String,
    pub period: Option<Period>,
    pub stops: u64,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RaceAggregate {
    pub race: String,
    pub period: Option<Period>,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

#[derive(Debug)]
pub struct ThresholdFit {
    pub draws: PosteriorDraws,
    pub rhat: Vec<f64>,
    /// All finite R-hats below [`RHAT_BOUND`].
    pub converged: bool,
    pub group_thresholds: Vec<GroupThreshold>,
    pub aggregates: Vec<RaceAggregate>,
    pub warnings: Vec<String>,
}

/// Fit the static threshold test.
///
/// Non-convergence is reported through `converged` and a warning, not an
/// error: the summaries are still emitted for inspection.
pub fn fit(data: &ThresholdData, config: &FitConfig) -> Result<ThresholdFit> {
    if data.has_periods {
        return Err(Error::validation(
            "data carry pre/post periods; use fit_prepost".to_string(),
        ));
    }
    fit_impl(data, config)
}

/// Fit the time-varying extension on pre/post-tagged data.
pub fn fit_prepost(data: &ThresholdData, config: &FitConfig) -> Result<ThresholdFit> {
    if !data.has_periods {
        return Err(Error::validation(
            "data carry no periods; use fit for the static model".to_string(),
        ));
    }
    fit_impl(data, config)
}

fn fit_impl(data: &ThresholdData, config: &FitConfig) -> Result<ThresholdFit> {
    let model = ThresholdModel::new(data)?;
    let nuts = NutsConfig {
        chains: config.chains,
        warmup: config.warmup,
        draws: config.draws,
        seed: config.seed,
        target_accept: config.target_accept,
        max_tree_depth: config.max_tree_depth,
        init_jitter: 1.0,
        check_gradient: config.check_gradient,
    };
    let draws = nuts_sample(&model, &nuts)?;
    let rhats = rhat(&draws)?;
    let worst = max_rhat(&rhats);
    let converged = worst.is_finite() && worst < RHAT_BOUND;

    let mut warnings = data.warnings.clone();
    if !converged {
        warnings.push(format!("non-convergence: max R-hat {worst:.4} >= {RHAT_BOUND}"));
    }
    if data.has_periods {
        for race in &data.races {
            for period in [Period::Pre, Period::Post] {
                let searches: u64 = data
                    .groups
                    .iter()
                    .filter(|g| &g.race == race && g.period == Some(period))
                    .map(|g| g.searches)
                    .sum();
                if searches == 0 {
                    warnings.push(format!(
                        "no {} searches of {race} drivers: the period threshold is prior-driven",
                        period.as_str()
                    ));
                }
            }
        }
    }

    let group_thresholds = summarize_groups(&model, &draws, data);
    let aggregates = aggregate_thresholds(&model, &draws, data)?;

    Ok(ThresholdFit { draws, rhat: rhats, converged, group_thresholds, aggregates, warnings })
}

fn summarize_groups(
    model: &ThresholdModel,
    draws: &PosteriorDraws,
    data: &ThresholdData,
) -> Vec<GroupThreshold> {
    let mut out = Vec::with_capacity(data.groups.len());
    for g in &data.groups {
        let r = data.race_index(&g.race).expect("race is in the grid");
        let d = data.location_index(&g.location).expect("location is in the grid");
        let t_idx = model.threshold_index(r, d);
        let shift_idx = if g.period == Some(Period::Post) {
            model.post_threshold_index(r)
        } else {
            None
        };
        let mut series = Vec::with_capacity(draws.n_draws_total());
        for draw in draws.iter_draws() {
            let t = draw[t_idx] + shift_idx.map_or(0.0, |i| draw[i]);
            series.push(t);
        }
        let (mean, lo95, hi95) = crate::inference::mean_and_interval(&series, 0.95);
        out.push(GroupThreshold {
            race: g.race.clone(),
            location: g.location.clone(),
            period: g.period,
            stops: g.stops,
            mean,
            lo95,
            hi95,
        });
    }
    out
}

/// Stop-weighted average of location thresholds per race (and period), with
/// posterior mean and central 95% interval across draws.
///
/// Weights are each location's total stops across races, as in the aggregate
/// reported by the test.
pub fn aggregate_thresholds(
    model: &ThresholdModel,
    draws: &PosteriorDraws,
    data: &ThresholdData,
) -> Result<Vec<RaceAggregate>> {
    let weights = data.location_stop_totals();
    let total_weight: f64 = weights.iter().sum();
    if total_weight <= 0.0 {
        return Err(Error::validation("no stops to weight the aggregate by".to_string()));
    }
    let periods: Vec<Option<Period>> =
        if data.has_periods { vec![Some(Period::Pre), Some(Period::Post)] } else { vec![None] };

    let mut out = Vec::new();
    for (r, race) in data.races.iter().enumerate() {
        for period in &periods {
            let shift_idx = if *period == Some(Period::Post) {
                model.post_threshold_index(r)
            } else {
                None
            };
            let mut series = Vec::with_capacity(draws.n_draws_total());
            for draw in draws.iter_draws() {
                let shift = shift_idx.map_or(0.0, |i| draw[i]);
                let mut acc = 0.0;
                for d in 0..data.locations.len() {
                    acc += weights[d] * (draw[model.threshold_index(r, d)] + shift);
                }
                series.push(acc / total_weight);
            }
            let (mean, lo95, hi95) = crate::inference::mean_and_interval(&series, 0.95);
            out.push(RaceAggregate { race: race.clone(), period: *period, mean, lo95, hi95 });
        }
    }
    Ok(out)
}

/// Posterior predictive comparison for one group.
#[derive(Debug, Clone, Serialize)]
pub struct PpcGroup {
    pub race: String,
    pub location: String,
    pub period: Option<Period>,
    pub stops: u64,
    pub searches: u64,
    pub hits: u64,
    pub observed_search_rate: f64,
    /// None when the group has no searches (undefined hit rate).
    pub observed_hit_rate: Option<f64>,
    /// Analytic search/hit rates averaged over all posterior draws.
    pub predicted_search_rate: f64,
    pub predicted_hit_rate: f64,
    /// Central 95% posterior predictive intervals of the observable rates.
    pub search_interval: (f64, f64),
    pub hit_interval: (f64, f64),
}

/// Posterior predictive checks: analytic rates averaged across draws plus
/// simulated 95% intervals for the observable rates. Deterministic given the
/// draws and `seed`.
pub fn ppc(
    model: &ThresholdModel,
    draws: &PosteriorDraws,
    data: &ThresholdData,
    seed: u64,
) -> Result<Vec<PpcGroup>> {
    let mut out = Vec::new();
    for (gi, g) in data.groups.iter().enumerate() {
        if g.stops == 0 {
            continue;
        }
        let r = data
            .race_index(&g.race)
            .ok_or_else(|| Error::validation(format!("unknown race '{}'", g.race)))?;
        let d = data
            .location_index(&g.location)
            .ok_or_else(|| Error::validation(format!("unknown location '{}'", g.location)))?;

        let mut rng = RngState::new(seed, gi as u64).rng();
        let mut search_sum = 0.0;
        let mut hit_sum = 0.0;
        let mut sim_search = Vec::with_capacity(draws.n_draws_total());
        let mut sim_hit = Vec::with_capacity(draws.n_draws_total());
        let mut n_valid = 0usize;

        for draw in draws.iter_draws() {
            let (phi, lambda, thr) = model.group_signal(draw, r, d, g.period);
            let tail = beta_tail_mean(BetaShape::new(phi, lambda)?, thr.clamp(0.0, 1.0))?;
            search_sum += tail.search_rate;
            hit_sum += tail.hit_rate;
            n_valid += 1;

            let s_star = if tail.search_rate > 0.0 {
                Binomial::new(g.stops, tail.search_rate.min(1.0))
                    .map_err(|e| Error::computation(format!("binomial: {e}")))?
                    .sample(&mut rng)
            } else {
                0
            };
            sim_search.push(s_star as f64 / g.stops as f64);
            if s_star > 0 {
                let h_star = Binomial::new(s_star, tail.hit_rate.clamp(0.0, 1.0))
                    .map_err(|e| Error::computation(format!("binomial: {e}")))?
                    .sample(&mut rng);
                sim_hit.push(h_star as f64 / s_star as f64);
            }
        }

        if n_valid == 0 {
            continue;
        }
        let quant = |xs: &mut Vec<f64>| -> (f64, f64) {
            if xs.is_empty() {
                return (f64::NAN, f64::NAN);
            }
            xs.sort_by(f64::total_cmp);
            (
                crate::inference::quantile_sorted(xs, 0.025),
                crate::inference::quantile_sorted(xs, 0.975),
            )
        };
        let search_interval = quant(&mut sim_search);
        let hit_interval = quant(&mut sim_hit);

        out.push(PpcGroup {
            race: g.race.clone(),
            location: g.location.clone(),
            period: g.period,
            stops: g.stops,
            searches: g.searches,
            hits: g.hits,
            observed_search_rate: g.searches as f64 / g.stops as f64,
            observed_hit_rate: if g.searches > 0 {
                Some(g.hits as f64 / g.searches as f64)
            } else {
                None
            },
            predicted_search_rate: search_sum / n_valid as f64,
            predicted_hit_rate: hit_sum / n_valid as f64,
            search_interval,
            hit_interval,
        });
    }
    Ok(out)
}
