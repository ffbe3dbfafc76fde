//! Convergence diagnostics.

use crate::error::{Error, Result};
use crate::inference::draws::PosteriorDraws;

/// Split-chain potential scale reduction factor per parameter.
///
/// Each chain is split in half (the middle draw is dropped when odd) and the
/// usual between/within variance ratio is computed over the split chains.
/// Exactly equal split means give exactly 1. Parameters that are constant
/// within every split chain are degenerate and reported as NaN.
pub fn rhat(draws: &PosteriorDraws) -> Result<Vec<f64>> {
    if draws.chains < 2 {
        return Err(Error::validation("R-hat needs at least 2 chains".to_string()));
    }
    if draws.draws_per_chain < 10 {
        return Err(Error::validation("R-hat needs at least 10 draws per chain".to_string()));
    }

    let half = draws.draws_per_chain / 2;
    let mut out = Vec::with_capacity(draws.dim);
    for p in 0..draws.dim {
        let mut split_means = Vec::with_capacity(draws.chains * 2);
        let mut split_vars = Vec::with_capacity(draws.chains * 2);
        for c in 0..draws.chains {
            let series = draws.chain_param(c, p);
            let first = &series[..half];
            let second = &series[series.len() - half..];
            for s in [first, second] {
                let (m, v) = mean_var(s);
                split_means.push(m);
                split_vars.push(v);
            }
        }
        let w = split_vars.iter().sum::<f64>() / split_vars.len() as f64;
        let (_, var_of_means) = mean_var(&split_means);
        let b = half as f64 * var_of_means;
        if w == 0.0 {
            // constant within every split chain
            out.push(f64::NAN);
        } else if b == 0.0 {
            out.push(1.0);
        } else {
            let n = half as f64;
            let v_hat = (n - 1.0) / n * w + b / n;
            out.push((v_hat / w).sqrt());
        }
    }
    Ok(out)
}

/// Largest finite R-hat, ignoring degenerate parameters.
pub fn max_rhat(values: &[f64]) -> f64 {
    values.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
