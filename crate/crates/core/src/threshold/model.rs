//! The hierarchical threshold-test model.
//!
//! Per (race r, location d[, period t]) group, a stopped driver carries
//! contraband with probability p ~ beta(φ_rd, λ_rd) in mean/total-count form,
//! where φ_rd = logit⁻¹(φ_r + φ_d) and λ_rd = exp(λ_r + λ_d); a search happens
//! iff p ≥ t_rd, and a search finds contraband with probability p. The
//! per-stop probabilities of the three observable outcomes follow in closed
//! form from beta tails, so the aggregated counts (n, s, h) have likelihood
//!
//! ```text
//! (n−s)·ln I_t(α,β) + h·[ln φ + ln(1−I_t(α+1,β))] + (s−h)·[ln(1−φ) + ln(1−I_t(α,β+1))]
//! ```
//!
//! plus binomial coefficients, with α = φλ, β = (1−φ)λ. The time-varying
//! extension adds race-level post-period shifts φ_rt, λ_rt, t_rt that are
//! zero in the pre period.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{LogDensityModel, Transform};
use crate::numerics::beta::{ln_beta_lower_grad, ln_beta_upper_grad, LnTail};
use crate::numerics::special::ln_gamma;
use crate::threshold::data::{Period, ThresholdData};

/// Prior constants (all scales are standard deviations).
///
/// Race-level effects and threshold prior means are N(0, RACE_SCALE);
/// location-effect and threshold scales are half-normal(HYPER_SCALE);
/// post-period shifts are N(0, POST_SCALE).
pub const RACE_SCALE: f64 = 2.0;
pub const HYPER_SCALE: f64 = 2.0;
pub const POST_SCALE: f64 = 1.0;

/// Structured view of the model parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdParams {
    pub phi_race: Vec<f64>,
    pub lambda_race: Vec<f64>,
    pub phi_loc: Vec<f64>,
    pub lambda_loc: Vec<f64>,
    /// Race-major thresholds in (0,1): index r·D + d.
    pub thresholds: Vec<f64>,
    pub sigma_phi: f64,
    pub sigma_lambda: f64,
    /// Per-race mean of logit thresholds.
    pub nu_race: Vec<f64>,
    /// Scale of logit thresholds.
    pub tau: f64,
    /// Post-period shifts (φ_rt, λ_rt, t_rt per race); present iff the data
    /// carry periods.
    pub post: Option<PostShifts>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PostShifts {
    pub phi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub threshold: Vec<f64>,
}

impl ThresholdParams {
    /// Flat layout: φ_r, λ_r, φ_d, λ_d, t_rd, σ_φ, σ_λ, ν_r, τ [, φ_rt, λ_rt, t_rt].
    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(&self.phi_race);
        out.extend(&self.lambda_race);
        out.extend(&self.phi_loc);
        out.extend(&self.lambda_loc);
        out.extend(&self.thresholds);
        out.push(self.sigma_phi);
        out.push(self.sigma_lambda);
        out.extend(&self.nu_race);
        out.push(self.tau);
        if let Some(post) = &self.post {
            out.extend(&post.phi);
            out.extend(&post.lambda);
            out.extend(&post.threshold);
        }
        out
    }

    pub fn unpack(flat: &[f64], races: usize, locations: usize, has_post: bool) -> Result<Self> {
        let expected = dim_for(races, locations, has_post);
        if flat.len() != expected {
            return Err(Error::validation(format!(
                "parameter vector has length {}, expected {expected}",
                flat.len()
            )));
        }
        let mut i = 0;
        let mut take = |n: usize| {
            let s = flat[i..i + n].to_vec();
            i += n;
            s
        };
        let phi_race = take(races);
        let lambda_race = take(races);
        let phi_loc = take(locations);
        let lambda_loc = take(locations);
        let thresholds = take(races * locations);
        let sigma_phi = take(1)[0];
        let sigma_lambda = take(1)[0];
        let nu_race = take(races);
        let tau = take(1)[0];
        let post = if has_post {
            Some(PostShifts { phi: take(races), lambda: take(races), threshold: take(races) })
        } else {
            None
        };
        Ok(ThresholdParams {
            phi_race,
            lambda_race,
            phi_loc,
            lambda_loc,
            thresholds,
            sigma_phi,
            sigma_lambda,
            nu_race,
            tau,
            post,
        })
    }
}

pub(crate) fn dim_for(races: usize, locations: usize, has_post: bool) -> usize {
    2 * races + 2 * locations + races * locations + 2 + races + 1 + if has_post { 3 * races } else { 0 }
}

/// Flat-vector offsets.
struct Layout {
    r: usize,
    d: usize,
    has_post: bool,
}

impl Layout {
    fn phi_race(&self, r: usize) -> usize {
        r
    }
    fn lambda_race(&self, r: usize) -> usize {
        self.r + r
    }
    fn phi_loc(&self, d: usize) -> usize {
        2 * self.r + d
    }
    fn lambda_loc(&self, d: usize) -> usize {
        2 * self.r + self.d + d
    }
    fn threshold(&self, r: usize, d: usize) -> usize {
        2 * self.r + 2 * self.d + r * self.d + d
    }
    fn sigma_phi(&self) -> usize {
        2 * self.r + 2 * self.d + self.r * self.d
    }
    fn sigma_lambda(&self) -> usize {
        self.sigma_phi() + 1
    }
    fn nu_race(&self, r: usize) -> usize {
        self.sigma_phi() + 2 + r
    }
    fn tau(&self) -> usize {
        self.sigma_phi() + 2 + self.r
    }
    fn post_phi(&self, r: usize) -> usize {
        self.tau() + 1 + r
    }
    fn post_lambda(&self, r: usize) -> usize {
        self.tau() + 1 + self.r + r
    }
    fn post_threshold(&self, r: usize) -> usize {
        self.tau() + 1 + 2 * self.r + r
    }
    fn dim(&self) -> usize {
        dim_for(self.r, self.d, self.has_post)
    }
}

struct GroupRef {
    race: usize,
    location: usize,
    post: bool,
    stops: f64,
    searches: f64,
    hits: f64,
    /// ln C(n,s) + ln C(s,h), constant in the parameters.
    ln_binom: f64,
}

/// The threshold-test posterior as a differentiable log density.
pub struct ThresholdModel {
    races: Vec<String>,
    locations: Vec<String>,
    layout: Layout,
    groups: Vec<GroupRef>,
    /// Data-informed starting point.
    init: Vec<f64>,
}

fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

impl ThresholdModel {
    pub fn new(data: &ThresholdData) -> Result<ThresholdModel> {
        let r = data.races.len();
        let d = data.locations.len();
        if r == 0 || d == 0 {
            return Err(Error::validation("threshold data has no races or locations".to_string()));
        }
        let layout = Layout { r, d, has_post: data.has_periods };

        let mut groups = Vec::new();
        let mut race_hits = vec![0.0; r];
        let mut race_searches = vec![0.0; r];
        for g in &data.groups {
            let race = data
                .race_index(&g.race)
                .ok_or_else(|| Error::validation(format!("unknown race '{}'", g.race)))?;
            let location = data
                .location_index(&g.location)
                .ok_or_else(|| Error::validation(format!("unknown location '{}'", g.location)))?;
            race_searches[race] += g.searches as f64;
            race_hits[race] += g.hits as f64;
            if g.stops == 0 {
                continue;
            }
            let (n, s, h) = (g.stops as f64, g.searches as f64, g.hits as f64);
            groups.push(GroupRef {
                race,
                location,
                post: g.period == Some(Period::Post),
                stops: n,
                searches: s,
                hits: h,
                ln_binom: ln_choose(n, s) + ln_choose(s, h),
            });
        }

        // data-informed but deliberately rough starting point
        let mut init = vec![0.0; layout.dim()];
        for race in 0..r {
            let hit_rate = if race_searches[race] > 0.0 {
                (race_hits[race] / race_searches[race]).clamp(0.05, 0.9)
            } else {
                0.25
            };
            let phi0 = (0.7 * hit_rate).clamp(0.02, 0.8);
            init[layout.phi_race(race)] = (phi0 / (1.0 - phi0)).ln();
            init[layout.lambda_race(race)] = 5.0_f64.ln();
            init[layout.nu_race(race)] = (0.15_f64 / 0.85).ln();
            for loc in 0..d {
                init[layout.threshold(race, loc)] = 0.15;
            }
        }
        init[layout.sigma_phi()] = 0.5;
        init[layout.sigma_lambda()] = 0.5;
        init[layout.tau()] = 0.5;

        Ok(ThresholdModel {
            races: data.races.clone(),
            locations: data.locations.clone(),
            layout,
            groups,
            init,
        })
    }

    pub fn races(&self) -> &[String] {
        &self.races
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn has_periods(&self) -> bool {
        self.layout.has_post
    }

    /// Flat index of t_rd.
    pub fn threshold_index(&self, race: usize, location: usize) -> usize {
        self.layout.threshold(race, location)
    }

    /// Flat index of the post-period threshold shift for a race.
    pub fn post_threshold_index(&self, race: usize) -> Option<usize> {
        self.layout.has_post.then(|| self.layout.post_threshold(race))
    }

    /// Group-level (φ, λ, threshold) implied by a parameter vector.
    pub fn group_signal(
        &self,
        theta: &[f64],
        race: usize,
        location: usize,
        period: Option<Period>,
    ) -> (f64, f64, f64) {
        let l = &self.layout;
        let post = l.has_post && period == Some(Period::Post);
        let u = theta[l.phi_race(race)]
            + theta[l.phi_loc(location)]
            + if post { theta[l.post_phi(race)] } else { 0.0 };
        let v = theta[l.lambda_race(race)]
            + theta[l.lambda_loc(location)]
            + if post { theta[l.post_lambda(race)] } else { 0.0 };
        let t = theta[l.threshold(race, location)]
            + if post { theta[l.post_threshold(race)] } else { 0.0 };
        (sigmoid(u), v.exp(), t)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// ln I_x(a,b) (lower) or ln(1−I_x(a,b)) (upper) with boundary semantics at
/// x = 0 and x = 1; derivatives are zero at the boundaries.
fn ln_tail(x: f64, a: f64, b: f64, upper: bool) -> Result<LnTail> {
    if x <= 0.0 {
        let ln = if upper { 0.0 } else { f64::NEG_INFINITY };
        return Ok(LnTail { ln, d_da: 0.0, d_db: 0.0, d_dx: 0.0 });
    }
    if x >= 1.0 {
        let ln = if upper { f64::NEG_INFINITY } else { 0.0 };
        return Ok(LnTail { ln, d_da: 0.0, d_db: 0.0, d_dx: 0.0 });
    }
    if upper {
        ln_beta_upper_grad(x, a, b)
    } else {
        ln_beta_lower_grad(x, a, b)
    }
}

struct NormalPrior {
    scale: f64,
}

impl NormalPrior {
    fn lp(&self, x: f64) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * self.scale * self.scale).ln()
            - x * x / (2.0 * self.scale * self.scale)
    }
    fn grad(&self, x: f64) -> f64 {
        -x / (self.scale * self.scale)
    }
}

fn half_normal_lp(x: f64, scale: f64) -> f64 {
    0.5 * std::f64::consts::LN_2 - 0.5 * std::f64::consts::PI.ln() - scale.ln()
        - x * x / (2.0 * scale * scale)
}

impl LogDensityModel for ThresholdModel {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for r in &self.races {
            names.push(format!("phi_race[{r}]"));
        }
        for r in &self.races {
            names.push(format!("lambda_race[{r}]"));
        }
        for l in &self.locations {
            names.push(format!("phi_loc[{l}]"));
        }
        for l in &self.locations {
            names.push(format!("lambda_loc[{l}]"));
        }
        for r in &self.races {
            for l in &self.locations {
                names.push(format!("t[{r},{l}]"));
            }
        }
        names.push("sigma_phi".to_string());
        names.push("sigma_lambda".to_string());
        for r in &self.races {
            names.push(format!("nu[{r}]"));
        }
        names.push("tau".to_string());
        if self.layout.has_post {
            for r in &self.races {
                names.push(format!("phi_post[{r}]"));
            }
            for r in &self.races {
                names.push(format!("lambda_post[{r}]"));
            }
            for r in &self.races {
                names.push(format!("t_post[{r}]"));
            }
        }
        names
    }

    fn transforms(&self) -> Vec<Transform> {
        let l = &self.layout;
        let mut t = vec![Transform::Identity; self.dim()];
        for r in 0..l.r {
            for d in 0..l.d {
                t[l.threshold(r, d)] = Transform::Logit;
            }
        }
        t[l.sigma_phi()] = Transform::Log;
        t[l.sigma_lambda()] = Transform::Log;
        t[l.tau()] = Transform::Log;
        t
    }

    fn initial_values(&self) -> Option<Vec<f64>> {
        Some(self.init.clone())
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let l = &self.layout;
        if theta.len() != l.dim() {
            return Err(Error::validation(format!(
                "parameter vector has length {}, expected {}",
                theta.len(),
                l.dim()
            )));
        }
        let mut lp = 0.0;
        let mut grad = vec![0.0; l.dim()];

        let race_prior = NormalPrior { scale: RACE_SCALE };
        let post_prior = NormalPrior { scale: POST_SCALE };

        let sigma_phi = theta[l.sigma_phi()];
        let sigma_lambda = theta[l.sigma_lambda()];
        let tau = theta[l.tau()];
        if sigma_phi <= 0.0 || sigma_lambda <= 0.0 || tau <= 0.0 {
            return Err(Error::domain("hierarchy scales must be positive".to_string()));
        }

        // race-level priors
        for r in 0..l.r {
            for idx in [l.phi_race(r), l.lambda_race(r), l.nu_race(r)] {
                lp += race_prior.lp(theta[idx]);
                grad[idx] += race_prior.grad(theta[idx]);
            }
        }
        // hyper-scale priors
        for idx in [l.sigma_phi(), l.sigma_lambda(), l.tau()] {
            let x = theta[idx];
            lp += half_normal_lp(x, HYPER_SCALE);
            grad[idx] += -x / (HYPER_SCALE * HYPER_SCALE);
        }
        // location effects: zero-mean hierarchical normals
        for d in 0..l.d {
            let x = theta[l.phi_loc(d)];
            lp += -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma_phi.ln()
                - x * x / (2.0 * sigma_phi * sigma_phi);
            grad[l.phi_loc(d)] += -x / (sigma_phi * sigma_phi);
            grad[l.sigma_phi()] += -1.0 / sigma_phi + x * x / (sigma_phi * sigma_phi * sigma_phi);

            let y = theta[l.lambda_loc(d)];
            lp += -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma_lambda.ln()
                - y * y / (2.0 * sigma_lambda * sigma_lambda);
            grad[l.lambda_loc(d)] += -y / (sigma_lambda * sigma_lambda);
            grad[l.sigma_lambda()] +=
                -1.0 / sigma_lambda + y * y / (sigma_lambda * sigma_lambda * sigma_lambda);
        }
        // logit-normal threshold prior; boundary thresholds are degenerate
        // limit points where the likelihood alone decides finiteness
        for r in 0..l.r {
            let nu = theta[l.nu_race(r)];
            for d in 0..l.d {
                let t = theta[l.threshold(r, d)];
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::domain(format!("threshold t[{r},{d}] = {t} outside [0,1]")));
                }
                if t == 0.0 || t == 1.0 {
                    continue;
                }
                let logit_t = (t / (1.0 - t)).ln();
                let resid = logit_t - nu;
                lp += -0.5 * (2.0 * std::f64::consts::PI).ln() - tau.ln()
                    - resid * resid / (2.0 * tau * tau)
                    - (t * (1.0 - t)).ln();
                let dt_chain = 1.0 / (t * (1.0 - t));
                grad[l.threshold(r, d)] +=
                    -resid / (tau * tau) * dt_chain - (1.0 - 2.0 * t) * dt_chain;
                grad[l.nu_race(r)] += resid / (tau * tau);
                grad[l.tau()] += -1.0 / tau + resid * resid / (tau * tau * tau);
            }
        }
        // post-period shift priors
        if l.has_post {
            for r in 0..l.r {
                for idx in [l.post_phi(r), l.post_lambda(r), l.post_threshold(r)] {
                    lp += post_prior.lp(theta[idx]);
                    grad[idx] += post_prior.grad(theta[idx]);
                }
            }
        }

        // likelihood
        for g in &self.groups {
            let u = theta[l.phi_race(g.race)]
                + theta[l.phi_loc(g.location)]
                + if g.post { theta[l.post_phi(g.race)] } else { 0.0 };
            let v = theta[l.lambda_race(g.race)]
                + theta[l.lambda_loc(g.location)]
                + if g.post { theta[l.post_lambda(g.race)] } else { 0.0 };
            let thr = theta[l.threshold(g.race, g.location)]
                + if g.post { theta[l.post_threshold(g.race)] } else { 0.0 };

            // the post shift is additive on the threshold scale and can push
            // the effective threshold out of (0,1); that carries zero
            // likelihood, not an evaluation error
            if !(0.0..=1.0).contains(&thr) {
                return Ok((f64::NEG_INFINITY, vec![0.0; l.dim()]));
            }

            let phi = sigmoid(u);
            let lambda = v.exp();
            let alpha = phi * lambda;
            let beta = (1.0 - phi) * lambda;
            if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                return Ok((f64::NEG_INFINITY, vec![0.0; l.dim()]));
            }

            let n_nosearch = g.stops - g.searches;
            let h_hit = g.hits;
            let h_miss = g.searches - g.hits;

            let mut da = 0.0;
            let mut db = 0.0;
            let mut dthr = 0.0;
            let mut ll = g.ln_binom;

            if n_nosearch > 0.0 {
                let t0 = ln_tail(thr, alpha, beta, false)?;
                ll += n_nosearch * t0.ln;
                da += n_nosearch * t0.d_da;
                db += n_nosearch * t0.d_db;
                dthr += n_nosearch * t0.d_dx;
            }
            if h_hit > 0.0 {
                let t1 = ln_tail(thr, alpha + 1.0, beta, true)?;
                ll += h_hit * (-softplus(-u) + t1.ln);
                da += h_hit * t1.d_da;
                db += h_hit * t1.d_db;
                dthr += h_hit * t1.d_dx;
            }
            if h_miss > 0.0 {
                let t2 = ln_tail(thr, alpha, beta + 1.0, true)?;
                ll += h_miss * (-softplus(u) + t2.ln);
                da += h_miss * t2.d_da;
                db += h_miss * t2.d_db;
                dthr += h_miss * t2.d_dx;
            }

            if ll == f64::NEG_INFINITY {
                return Ok((f64::NEG_INFINITY, vec![0.0; l.dim()]));
            }
            lp += ll;

            // chain rule: α = φλ, β = (1−φ)λ, φ = σ(u), λ = e^v, plus the
            // direct ln φ / ln(1−φ) terms
            let sig_grad = phi * (1.0 - phi);
            let d_phi_direct = h_hit * (1.0 - phi) - h_miss * phi; // d/du of the softplus terms
            let g_u = d_phi_direct + (da - db) * lambda * sig_grad;
            let g_v = (da * phi + db * (1.0 - phi)) * lambda;

            grad[l.phi_race(g.race)] += g_u;
            grad[l.phi_loc(g.location)] += g_u;
            grad[l.lambda_race(g.race)] += g_v;
            grad[l.lambda_loc(g.location)] += g_v;
            grad[l.threshold(g.race, g.location)] += dthr;
            if g.post {
                grad[l.post_phi(g.race)] += g_u;
                grad[l.post_lambda(g.race)] += g_v;
                grad[l.post_threshold(g.race)] += dthr;
            }
        }

        Ok((lp, grad))
    }
}

/// Log posterior and gradient at a structured parameter point.
pub fn log_posterior(params: &ThresholdParams, data: &ThresholdData) -> Result<(f64, Vec<f64>)> {
    let model = ThresholdModel::new(data)?;
    if params.post.is_some() != data.has_periods {
        return Err(Error::validation(
            "params and data disagree about the pre/post extension".to_string(),
        ));
    }
    model.value_and_gradient(&params.pack())
}
