//! IRLS fitting for the regression families used in the analysis:
//! logistic, Poisson, quasi-Poisson, and negative binomial with offset.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::glm::design::{Design, Term};
use crate::numerics::linalg::{solve_spd, spd_inverse};
use crate::numerics::special::{digamma, ln_gamma, trigamma};

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const LOGLIK_REL_TOL: f64 = 1e-10;
/// Coefficients this large on the logit scale mean fitted probabilities of
/// ~1e-13; treat as separation.
const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Family {
    Logistic,
    Poisson,
    QuasiPoisson,
    NegBin,
}

/// Fitted model: coefficients with covariance and convergence metadata.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub family: Family,
    pub terms: Vec<Term>,
    /// Factor declarations of the design (reference level first).
    pub factors: Vec<crate::glm::design::Factor>,
    pub covariate_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// NegBin φ, quasi-Poisson scale, 1 otherwise.
    pub dispersion: f64,
    #[serde(serialize_with = "serialize_matrix")]
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
    /// Data-quality or fitting notes (separation, equidispersion, ...).
    pub flags: Vec<String>,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = (0..m.ncols()).map(|j| m[(i, j)]).collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl FitResult {
    pub fn coefficient(&self, term_name: &str) -> Option<f64> {
        self.terms
            .iter()
            .position(|t| t.name() == term_name)
            .map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, term_name: &str) -> Option<f64> {
        self.terms
            .iter()
            .position(|t| t.name() == term_name)
            .map(|i| self.std_errors[i])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_binary_response(design: &Design) -> Result<()> {
    for row in &design.rows {
        if row.response != 0.0 && row.response != 1.0 {
            return Err(Error::validation(format!(
                "logistic regression needs a 0/1 response, row {} has {}",
                row.src_idx, row.response
            )));
        }
    }
    Ok(())
}

fn check_count_response(design: &Design) -> Result<()> {
    for row in &design.rows {
        if row.response < 0.0 || row.response.fract() != 0.0 {
            return Err(Error::validation(format!(
                "count regression needs non-negative integer responses, row {} has {}",
                row.src_idx, row.response
            )));
        }
    }
    let bad: Vec<usize> = design
        .rows
        .iter()
        .filter(|r| !r.offset.is_finite())
        .map(|r| r.src_idx)
        .collect();
    if !bad.is_empty() {
        return Err(Error::validation(format!(
            "non-finite log-exposure offsets (zero benchmark population?) at rows {bad:?}"
        )));
    }
    Ok(())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logistic_loglik(design: &Design, beta: &DVector<f64>) -> f64 {
    design.fold_rows(0.0, |acc, row, eta| acc + row.weight * (row.response * eta - softplus(eta)), beta)
}

fn poisson_loglik(design: &Design, beta: &DVector<f64>) -> f64 {
    design.fold_rows(
        0.0,
        |acc, row, eta| acc + row.weight * (row.response * eta - eta.exp() - ln_gamma(row.response + 1.0)),
        beta,
    )
}

pub(crate) fn negbin_loglik(design: &Design, beta: &DVector<f64>, phi: f64) -> f64 {
    design.fold_rows(
        0.0,
        |acc, row, eta| {
            let mu = eta.exp();
            let y = row.response;
            acc + row.weight
                * (ln_gamma(y + phi) - ln_gamma(phi) - ln_gamma(y + 1.0) - phi * (mu / phi).ln_1p()
                    + y * (mu.ln() - (phi + mu).ln()))
        },
        beta,
    )
}

struct IrlsOutcome {
    beta: DVector<f64>,
    iterations: usize,
    converged: bool,
    loglik: f64,
    flags: Vec<String>,
}

/// Fisher scoring with step halving on log-likelihood decrease.
///
/// `weight_resid(row, eta)` returns the working weight and the score residual
/// so that the update solves X'WX δ = X'r.
fn irls(
    design: &Design,
    loglik: impl Fn(&DVector<f64>) -> f64,
    weight_resid: impl Fn(&crate::glm::design::DesignRow, f64) -> (f64, f64) + Sync,
    detect_separation: bool,
) -> Result<IrlsOutcome> {
    let p = design.n_cols();
    let mut beta = DVector::zeros(p);
    let mut ll = loglik(&beta);
    let mut flags = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_rel_change = f64::INFINITY;

    for iter in 1..=MAX_ITER {
        iterations = iter;
        let (xtwx, score) = design.weighted_cross_products(&beta, &weight_resid);
        if score.amax() <= GRAD_TOL && last_rel_change <= LOGLIK_REL_TOL {
            converged = true;
            break;
        }

        let delta = solve_spd(&xtwx, &score).map_err(|e| match e {
            Error::Computation(msg) => Error::computation(format!("rank-deficient design: {msg}")),
            other => other,
        })?;

        // step-halving on loglik decrease (tolerance relative to |ll|)
        let accept_slack = 1e-12 * (1.0 + ll.abs());
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &delta * step;
            let cand_ll = loglik(&candidate);
            if cand_ll.is_finite() && cand_ll >= ll - accept_slack {
                last_rel_change = (cand_ll - ll).abs() / (1.0 + ll.abs());
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            flags.push("step-halving failed to improve log-likelihood".to_string());
            break;
        }
        if detect_separation && beta.amax() > SEPARATION_BOUND {
            flags.push("separation detected: coefficients diverging".to_string());
            break;
        }
    }

    Ok(IrlsOutcome { beta, iterations, converged, loglik: ll, flags })
}

fn finish(
    design: &Design,
    family: Family,
    outcome: IrlsOutcome,
    dispersion: f64,
    covariance: DMatrix<f64>,
) -> FitResult {
    let std_errors = (0..covariance.nrows()).map(|i| covariance[(i, i)].sqrt()).collect();
    FitResult {
        family,
        terms: design.terms(),
        factors: design.factors().to_vec(),
        covariate_names: design.covariate_names.clone(),
        coefficients: outcome.beta.iter().copied().collect(),
        std_errors,
        dispersion,
        covariance,
        converged: outcome.converged,
        iterations: outcome.iterations,
        loglik: outcome.loglik,
        flags: outcome.flags,
    }
}

/// Logistic regression; coefficients are log-odds against reference levels.
pub fn fit_logistic(design: &Design) -> Result<FitResult> {
    check_binary_response(design)?;
    if design.has_offset() {
        return Err(Error::validation("offsets are only supported for count families".to_string()));
    }
    let outcome = irls(
        design,
        |beta| logistic_loglik(design, beta),
        |row, eta| {
            let mu = 1.0 / (1.0 + (-eta).exp());
            (row.weight * mu * (1.0 - mu), row.weight * (row.response - mu))
        },
        true,
    )?;
    let (xtwx, _) = design.weighted_cross_products(&outcome.beta, |row, eta| {
        let mu = 1.0 / (1.0 + (-eta).exp());
        (row.weight * mu * (1.0 - mu), 0.0)
    });
    let covariance = spd_inverse(&xtwx)?;
    Ok(finish(design, Family::Logistic, outcome, 1.0, covariance))
}

/// Count regression: Poisson, quasi-Poisson, or negative binomial.
///
/// Quasi-Poisson reuses the Poisson coefficients and scales the covariance by
/// the Pearson dispersion. The negative binomial alternates Fisher scoring
/// for the coefficients with Newton steps on φ under Var = μ + μ²/φ; if φ
/// diverges the data are equidispersed and the Poisson fit is returned with a
/// flag.
pub fn fit_count(design: &Design, family: Family) -> Result<FitResult> {
    check_count_response(design)?;
    match family {
        Family::Poisson | Family::QuasiPoisson => {
            let outcome = poisson_irls(design)?;
            let (xtwx, _) = design
                .weighted_cross_products(&outcome.beta, |row, eta| (row.weight * eta.exp(), 0.0));
            let info_inv = spd_inverse(&xtwx)?;
            if family == Family::Poisson {
                Ok(finish(design, family, outcome, 1.0, info_inv))
            } else {
                let pearson = design.fold_rows(
                    0.0,
                    |acc, row, eta| {
                        let mu = eta.exp();
                        acc + row.weight * (row.response - mu).powi(2) / mu
                    },
                    &outcome.beta,
                );
                let df = design.n_obs() - design.n_cols() as f64;
                if df <= 0.0 {
                    return Err(Error::validation("no residual degrees of freedom for dispersion".to_string()));
                }
                let scale = pearson / df;
                Ok(finish(design, family, outcome, scale, info_inv * scale))
            }
        }
        Family::NegBin => fit_negbin(design),
        Family::Logistic => Err(Error::validation("use fit_logistic for binary responses".to_string())),
    }
}

fn poisson_irls(design: &Design) -> Result<IrlsOutcome> {
    irls(
        design,
        |beta| poisson_loglik(design, beta),
        |row, eta| {
            let mu = eta.exp();
            (row.weight * mu, row.weight * (row.response - mu))
        },
        false,
    )
}

fn fit_negbin(design: &Design) -> Result<FitResult> {
    // Poisson start for the coefficients.
    let mut outcome = poisson_irls(design)?;
    let mut phi = initial_phi(design, &outcome.beta).clamp(1e-3, 1e6);
    let mut flags = Vec::new();
    let mut converged = false;
    let mut iterations = outcome.iterations;

    for outer in 0..50 {
        let phi_prev = phi;
        phi = newton_phi(design, &outcome.beta, phi);
        if phi > 1e8 {
            let poisson = poisson_irls(design)?;
            let (xtwx, _) = design
                .weighted_cross_products(&poisson.beta, |row, eta| (row.weight * eta.exp(), 0.0));
            let covariance = spd_inverse(&xtwx)?;
            let mut fit = finish(design, Family::NegBin, poisson, f64::INFINITY, covariance);
            fit.flags.push("dispersion diverged: data equidispersed, Poisson fit returned".to_string());
            return Ok(fit);
        }

        let inner = irls(
            design,
            |beta| negbin_loglik(design, beta, phi),
            |row, eta| {
                let mu = eta.exp();
                let denom = 1.0 + mu / phi;
                (row.weight * mu / denom, row.weight * (row.response - mu) / denom)
            },
            false,
        )?;
        iterations += inner.iterations;
        let beta_shift = (&inner.beta - &outcome.beta).amax();
        outcome = inner;
        let phi_shift = (phi - phi_prev).abs() / (1.0 + phi.abs());
        if beta_shift < 1e-9 && phi_shift < 1e-9 && outcome.converged {
            converged = true;
            iterations += outer;
            break;
        }
    }

    let (xtwx, _) = design.weighted_cross_products(&outcome.beta, |row, eta| {
        let mu = eta.exp();
        (row.weight * mu / (1.0 + mu / phi), 0.0)
    });
    let covariance = spd_inverse(&xtwx)?;
    flags.extend(outcome.flags.drain(..));
    let loglik = negbin_loglik(design, &outcome.beta, phi);
    let all_converged = converged && outcome.converged;
    let mut fit = finish(
        design,
        Family::NegBin,
        IrlsOutcome { beta: outcome.beta, iterations, converged: all_converged, loglik, flags },
        phi,
        covariance,
    );
    fit.dispersion = phi;
    Ok(fit)
}

/// Method-of-moments start for φ from Pearson residuals.
fn initial_phi(design: &Design, beta: &DVector<f64>) -> f64 {
    let (num, den) = design.fold_rows(
        (0.0, 0.0),
        |(num, den), row, eta| {
            let mu = eta.exp();
            let resid2 = row.weight * ((row.response - mu).powi(2) - mu);
            (num + resid2, den + row.weight * mu * mu)
        },
        beta,
    );
    if num <= 0.0 || den <= 0.0 {
        1e6
    } else {
        (den / num).max(1e-3)
    }
}

/// Newton steps on ln φ for the NegBin profile likelihood in φ.
fn newton_phi(design: &Design, beta: &DVector<f64>, phi0: f64) -> f64 {
    let mut theta = phi0.ln();
    for _ in 0..100 {
        let phi = theta.exp();
        let (d1, d2) = design.fold_rows(
            (0.0, 0.0),
            |(d1, d2), row, eta| {
                let mu = eta.exp();
                let y = row.response;
                let g = digamma(y + phi) - digamma(phi) - (mu / phi).ln_1p() + (mu - y) / (phi + mu);
                let h = trigamma(y + phi) - trigamma(phi) + 1.0 / phi - 2.0 / (phi + mu)
                    + (y + phi) / (phi + mu).powi(2);
                (d1 + row.weight * g, d2 + row.weight * h)
            },
            beta,
        );
        // chain rule to ln φ
        let phi_d1 = phi * d1;
        let phi_d2 = phi * phi * d2 + phi_d1;
        if phi_d1.abs() < 1e-10 {
            break;
        }
        let mut step = if phi_d2 < 0.0 { -phi_d1 / phi_d2 } else { phi_d1.signum() };
        step = step.clamp(-2.0, 2.0);
        theta += step;
        if theta > 20.0 {
            return f64::INFINITY;
        }
        if step.abs() < 1e-12 {
            break;
        }
    }
    theta.exp()
}

/// Heteroskedasticity-robust covariance H⁻¹ (Σ gᵢgᵢᵀ) H⁻¹ for a Poisson fit.
///
/// Coefficients are untouched; only the covariance and standard errors change.
pub fn sandwich_errors(fit: &FitResult, design: &Design) -> Result<FitResult> {
    if fit.family != Family::Poisson && fit.family != Family::QuasiPoisson {
        return Err(Error::validation("sandwich errors are defined here for Poisson fits".to_string()));
    }
    let beta = DVector::from_vec(fit.coefficients.clone());
    let (h, _) = design.weighted_cross_products(&beta, |row, eta| (row.weight * eta.exp(), 0.0));
    let (meat, _) = design.weighted_cross_products(&beta, |row, eta| {
        let mu = eta.exp();
        (row.weight * (row.response - mu).powi(2), 0.0)
    });
    let h_inv = spd_inverse(&h).map_err(|e| match e {
        Error::Computation(msg) => Error::computation(format!("singular information matrix: {msg}")),
        other => other,
    })?;
    let covariance = &h_inv * meat * &h_inv;
    let mut out = fit.clone();
    out.std_errors = (0..covariance.nrows()).map(|i| covariance[(i, i)].sqrt()).collect();
    out.covariance = covariance;
    out.flags.push("sandwich covariance".to_string());
    Ok(out)
}

/// A factor-level assignment (plus covariate values) at which to predict.
#[derive(Debug, Clone, Default)]
pub struct Profile {
    pub levels: std::collections::BTreeMap<String, String>,
    pub covariates: std::collections::BTreeMap<String, f64>,
}

impl Profile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, factor: impl Into<String>, level: impl Into<String>) -> Self {
        self.levels.insert(factor.into(), level.into());
        self
    }

    pub fn set_covariate(mut self, name: impl Into<String>, value: f64) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }

    fn merged(&self, other: &Profile) -> Profile {
        let mut out = self.clone();
        for (k, v) in &other.levels {
            out.levels.insert(k.clone(), v.clone());
        }
        for (k, v) in &other.covariates {
            out.covariates.insert(k.clone(), *v);
        }
        out
    }
}

fn linear_predictor_at(fit: &FitResult, profile: &Profile) -> Result<f64> {
    let mut eta = fit.coefficients[0];
    let mut col = 1;
    for factor in &fit.factors {
        let level = profile
            .levels
            .get(&factor.name)
            .ok_or_else(|| Error::validation(format!("profile does not assign factor {}", factor.name)))?;
        let idx = factor
            .level_index(level)
            .ok_or_else(|| Error::validation(format!("unknown level '{level}' for factor {}", factor.name)))?;
        if idx > 0 {
            eta += fit.coefficients[col + idx as usize - 1];
        }
        col += factor.levels.len() - 1;
    }
    for name in &fit.covariate_names {
        let v = profile
            .covariates
            .get(name)
            .ok_or_else(|| Error::validation(format!("profile does not set covariate {name}")))?;
        eta += fit.coefficients[col] * v;
        col += 1;
    }
    Ok(eta)
}

fn inverse_link(family: Family, eta: f64) -> f64 {
    match family {
        Family::Logistic => 1.0 / (1.0 + (-eta).exp()),
        _ => eta.exp(),
    }
}

/// Inverse-link prediction at a fully specified profile.
///
/// For count families the exposure offset is excluded, so the result is a
/// rate per unit of exposure.
pub fn predict_rate(fit: &FitResult, profile: &Profile) -> Result<f64> {
    Ok(inverse_link(fit.family, linear_predictor_at(fit, profile)?))
}

/// Weighted average of predicted rates over a set of completion profiles.
///
/// Used for "typical driver" summaries: fix the demographic profile and
/// average over (location, year, ...) weighted by stop counts.
pub fn predict_rate_marginal(fit: &FitResult, fixed: &Profile, completions: &[(Profile, f64)]) -> Result<f64> {
    if completions.is_empty() {
        return Err(Error::validation("no completion profiles supplied".to_string()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (completion, w) in completions {
        let rate = predict_rate(fit, &fixed.merged(completion))?;
        num += w * rate;
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::validation("completion weights sum to zero".to_string()));
    }
    Ok(num / den)
}
