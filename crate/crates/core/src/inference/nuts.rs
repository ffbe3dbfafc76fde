//! No-U-Turn sampler with dual-averaging step-size adaptation and windowed
//! diagonal mass-matrix estimation.
//!
//! Chains run independently on per-chain RNG streams, so a fixed seed gives
//! bit-identical draws no matter how the chains are scheduled. Warmup follows
//! the usual fast/slow/fast schedule: a step-size-only opening buffer,
//! doubling covariance-estimation windows, and a closing step-size buffer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::draws::PosteriorDraws;
use crate::inference::model::{validate_gradient, LogDensityModel, Transform};
use crate::numerics::RngState;

/// Energy error above which a transition is recorded as divergent.
const DIVERGENCE_ENERGY: f64 = 1000.0;
const INIT_RETRIES: usize = 100;

#[derive(Debug, Clone)]
pub struct NutsConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Half-width of the uniform init jitter on the unconstrained scale.
    pub init_jitter: f64,
    /// Finite-difference validation of the model gradient at the init points.
    pub check_gradient: bool,
}

impl Default for NutsConfig {
    fn default() -> Self {
        NutsConfig {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            seed: 1,
            target_accept: 0.8,
            max_tree_depth: 10,
            init_jitter: 2.0,
            check_gradient: true,
        }
    }
}

/// Sample from `model` with one NUTS chain per configured chain index.
///
/// Draw `d` of chain `c` is reproducible from `(seed, c)` alone. A divergence
/// rate above 10% is reported as an error after sampling completes.
pub fn nuts_sample(model: &dyn LogDensityModel, config: &NutsConfig) -> Result<PosteriorDraws> {
    if config.chains == 0 || config.draws == 0 {
        return Err(Error::validation("need at least one chain and one draw".to_string()));
    }
    let dim = model.dim();
    if dim == 0 {
        return Err(Error::validation("model has zero dimension".to_string()));
    }

    let chain_results: Vec<Result<ChainRun>> = (0..config.chains)
        .into_par_iter()
        .map(|chain| run_chain(model, config, chain))
        .collect();

    let mut values = Vec::with_capacity(config.chains * config.draws * dim);
    let mut step_sizes = Vec::with_capacity(config.chains);
    let mut divergence_count = 0;
    for r in chain_results {
        let run = r?;
        values.extend_from_slice(&run.draws);
        step_sizes.push(run.step_size);
        divergence_count += run.divergences;
    }

    let draws = PosteriorDraws {
        chains: config.chains,
        draws_per_chain: config.draws,
        dim,
        parameter_names: model.parameter_names(),
        values,
        divergence_count,
        step_sizes,
        seed: config.seed,
    };

    let total_transitions = config.chains * config.draws;
    if divergence_count * 10 > total_transitions {
        return Err(Error::computation(format!(
            "divergence rate {:.1}% exceeds 10% ({divergence_count}/{total_transitions}); \
             the posterior geometry is not being explored reliably",
            100.0 * divergence_count as f64 / total_transitions as f64
        )));
    }
    Ok(draws)
}

struct ChainRun {
    draws: Vec<f64>,
    step_size: f64,
    divergences: usize,
}

/// Unconstrained-space view of the model.
struct UnconstrainedTarget<'a> {
    model: &'a dyn LogDensityModel,
    transforms: Vec<Transform>,
}

impl<'a> UnconstrainedTarget<'a> {
    fn new(model: &'a dyn LogDensityModel) -> Self {
        let transforms = model.transforms();
        assert_eq!(transforms.len(), model.dim());
        UnconstrainedTarget { model, transforms }
    }

    fn constrain(&self, z: &[f64], theta: &mut [f64]) {
        for (i, t) in self.transforms.iter().enumerate() {
            theta[i] = t.to_constrained(z[i]);
        }
    }

    /// Log density (with Jacobian) and gradient in z; non-finite values map
    /// to `None` so the tree building treats them as divergent states.
    fn logp_grad(&self, z: &[f64]) -> Option<(f64, Vec<f64>)> {
        let mut theta = vec![0.0; z.len()];
        self.constrain(z, &mut theta);
        if theta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let (mut lp, mut grad) = self.model.value_and_gradient(&theta).ok()?;
        for (i, t) in self.transforms.iter().enumerate() {
            lp += t.ln_jacobian(z[i]);
            grad[i] = grad[i] * t.jacobian(z[i]) + t.d_ln_jacobian(z[i]);
        }
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some((lp, grad))
    }
}

struct Phase {
    z: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

fn run_chain(model: &dyn LogDensityModel, config: &NutsConfig, chain: usize) -> Result<ChainRun> {
    let target = UnconstrainedTarget::new(model);
    let dim = model.dim();
    let mut rng = RngState::new(config.seed, chain as u64).rng();

    let (mut z, mut logp, mut grad) = initialize(&target, config, &mut rng)?;

    if config.check_gradient {
        let mut theta = vec![0.0; dim];
        target.constrain(&z, &mut theta);
        validate_gradient(model, &[theta], 1e-4).map_err(|e| {
            Error::computation(format!("model gradient failed validation at chain {chain} init: {e}"))
        })?;
    }

    let mut inv_mass = vec![1.0; dim];
    let mut eps = find_reasonable_epsilon(&target, &z, logp, &grad, &inv_mass, &mut rng);
    let mut da = DualAveraging::new(eps, config.target_accept);
    let schedule = WarmupSchedule::new(config.warmup);
    let mut welford = Welford::new(dim);
    let mut divergences = 0;

    // warmup
    for it in 0..config.warmup {
        let (state, info) = transition(&target, &z, logp, &grad, eps, &inv_mass, config.max_tree_depth, &mut rng);
        z = state.z;
        logp = state.logp;
        grad = state.grad;

        eps = da.update(info.accept_prob);
        if schedule.in_slow_window(it) {
            welford.push(&z);
        }
        if schedule.is_slow_window_end(it) {
            if welford.count >= 2 {
                inv_mass = welford.regularized_variance();
            }
            welford = Welford::new(dim);
            // re-anchor step-size adaptation on the new metric
            eps = find_reasonable_epsilon(&target, &z, logp, &grad, &inv_mass, &mut rng);
            da = DualAveraging::new(eps, config.target_accept);
        }
    }
    if config.warmup > 0 {
        eps = da.adapted();
    }

    // sampling
    let mut draws = Vec::with_capacity(config.draws * dim);
    let mut theta = vec![0.0; dim];
    for _ in 0..config.draws {
        let (state, info) = transition(&target, &z, logp, &grad, eps, &inv_mass, config.max_tree_depth, &mut rng);
        z = state.z;
        logp = state.logp;
        grad = state.grad;
        if info.divergent {
            divergences += 1;
        }
        target.constrain(&z, &mut theta);
        draws.extend_from_slice(&theta);
    }

    Ok(ChainRun { draws, step_size: eps, divergences })
}

fn initialize(
    target: &UnconstrainedTarget,
    config: &NutsConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let dim = target.model.dim();
    let base: Option<Vec<f64>> = target.model.initial_values().map(|theta| {
        theta
            .iter()
            .zip(&target.transforms)
            .map(|(&v, t)| t.to_unconstrained(v))
            .collect()
    });

    for attempt in 0..=INIT_RETRIES {
        let z: Vec<f64> = match (&base, attempt) {
            (Some(b), 0) => b.clone(),
            (Some(b), _) => b
                .iter()
                .map(|v| v + rng.gen_range(-config.init_jitter..config.init_jitter))
                .collect(),
            (None, _) => (0..dim)
                .map(|_| rng.gen_range(-config.init_jitter..config.init_jitter))
                .collect(),
        };
        if let Some((lp, grad)) = target.logp_grad(&z) {
            return Ok((z, lp, grad));
        }
    }
    Err(Error::computation(format!(
        "non-finite density or gradient at initialization after {INIT_RETRIES} jittered retries"
    )))
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(pi, mi)| pi * pi * mi).sum::<f64>()
}

fn sample_momentum(dim: usize, inv_mass: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let stddev = 1.0 / inv_mass[i].sqrt();
            let n: f64 = rng.sample(StandardNormal);
            n * stddev
        })
        .collect()
}

/// One leapfrog step; returns `None` when the density is non-finite.
fn leapfrog(target: &UnconstrainedTarget, phase: &Phase, eps: f64, inv_mass: &[f64]) -> Option<Phase> {
    let dim = phase.z.len();
    let mut p = phase.p.clone();
    for i in 0..dim {
        p[i] += 0.5 * eps * phase.grad[i];
    }
    let mut z = phase.z.clone();
    for i in 0..dim {
        z[i] += eps * inv_mass[i] * p[i];
    }
    let (logp, grad) = target.logp_grad(&z)?;
    for i in 0..dim {
        p[i] += 0.5 * eps * grad[i];
    }
    Some(Phase { z, p, grad, logp })
}

/// Step-size search doubling/halving until the one-step acceptance crosses 1/2.
fn find_reasonable_epsilon(
    target: &UnconstrainedTarget,
    z: &[f64],
    logp: f64,
    grad: &[f64],
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut eps = 1.0;
    let p = sample_momentum(z.len(), inv_mass, rng);
    let h0 = -logp + kinetic(&p, inv_mass);
    let phase = Phase { z: z.to_vec(), p, grad: grad.to_vec(), logp };

    let log_ratio = |eps: f64| -> f64 {
        match leapfrog(target, &phase, eps, inv_mass) {
            Some(next) => h0 - (-next.logp + kinetic(&next.p, inv_mass)),
            None => f64::NEG_INFINITY,
        }
    };

    let mut lr = log_ratio(eps);
    let dir: f64 = if lr > (0.5_f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        eps *= (2.0_f64).powf(dir);
        lr = log_ratio(eps);
        if (dir > 0.0 && lr <= (0.5_f64).ln()) || (dir < 0.0 && lr > (0.5_f64).ln()) {
            break;
        }
        if !(1e-10..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e7)
}

struct TransitionInfo {
    accept_prob: f64,
    divergent: bool,
}

struct NewState {
    z: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

struct Tree {
    minus: Phase,
    plus: Phase,
    proposal: Phase,
    log_sum_weight: f64,
    accept_sum: f64,
    n_leapfrog: usize,
    divergent: bool,
    turning: bool,
}

#[allow(clippy::too_many_arguments)]
fn transition(
    target: &UnconstrainedTarget,
    z: &[f64],
    logp: f64,
    grad: &[f64],
    eps: f64,
    inv_mass: &[f64],
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> (NewState, TransitionInfo) {
    let dim = z.len();
    let p = sample_momentum(dim, inv_mass, rng);
    let h0 = -logp + kinetic(&p, inv_mass);

    let init = Phase { z: z.to_vec(), p, grad: grad.to_vec(), logp };
    let mut minus = init.clone_phase();
    let mut plus = init.clone_phase();
    let mut proposal = init.clone_phase();
    let mut log_sum_weight = 0.0_f64; // weight of the initial state
    let mut accept_sum = 0.0;
    let mut n_leapfrog = 0usize;
    let mut divergent = false;

    for depth in 0..max_depth {
        let go_right = rng.gen::<bool>();
        let eps_signed = if go_right { eps } else { -eps };
        let start = if go_right { plus.clone_phase() } else { minus.clone_phase() };
        let sub = build_tree(target, start, depth, eps_signed, inv_mass, h0, rng);

        accept_sum += sub.accept_sum;
        n_leapfrog += sub.n_leapfrog;
        if sub.divergent {
            divergent = true;
            break;
        }
        if go_right {
            plus = sub.plus;
        } else {
            minus = sub.minus;
        }
        if sub.turning {
            break;
        }

        // biased progressive sampling toward the new subtree
        let accept_new = (sub.log_sum_weight - log_sum_weight).exp();
        if rng.gen::<f64>() < accept_new {
            proposal = sub.proposal;
        }
        log_sum_weight = log_add_exp(log_sum_weight, sub.log_sum_weight);

        if is_turning(&minus, &plus, inv_mass) {
            break;
        }
    }

    let accept_prob = if n_leapfrog > 0 { accept_sum / n_leapfrog as f64 } else { 0.0 };
    (
        NewState { z: proposal.z, logp: proposal.logp, grad: proposal.grad },
        TransitionInfo { accept_prob, divergent },
    )
}

impl Phase {
    fn clone_phase(&self) -> Phase {
        Phase { z: self.z.clone(), p: self.p.clone(), grad: self.grad.clone(), logp: self.logp }
    }
}

fn build_tree(
    target: &UnconstrainedTarget,
    start: Phase,
    depth: usize,
    eps: f64,
    inv_mass: &[f64],
    h0: f64,
    rng: &mut ChaCha8Rng,
) -> Tree {
    if depth == 0 {
        return match leapfrog(target, &start, eps, inv_mass) {
            Some(next) => {
                let h = -next.logp + kinetic(&next.p, inv_mass);
                let delta = h - h0;
                let divergent = !delta.is_finite() || delta > DIVERGENCE_ENERGY;
                let accept = if delta.is_finite() { (-delta).exp().min(1.0) } else { 0.0 };
                Tree {
                    minus: next.clone_phase(),
                    plus: next.clone_phase(),
                    proposal: next,
                    log_sum_weight: -delta,
                    accept_sum: accept,
                    n_leapfrog: 1,
                    divergent,
                    turning: false,
                }
            }
            None => Tree {
                minus: start.clone_phase(),
                plus: start.clone_phase(),
                proposal: start,
                log_sum_weight: f64::NEG_INFINITY,
                accept_sum: 0.0,
                n_leapfrog: 1,
                divergent: true,
                turning: false,
            },
        };
    }

    let first = build_tree(target, start, depth - 1, eps, inv_mass, h0, rng);
    if first.divergent || first.turning {
        return first;
    }
    let cont = if eps > 0.0 { first.plus.clone_phase() } else { first.minus.clone_phase() };
    let second = build_tree(target, cont, depth - 1, eps, inv_mass, h0, rng);

    let (minus, plus) = if eps > 0.0 {
        (first.minus, second.plus.clone_phase())
    } else {
        (second.minus.clone_phase(), first.plus)
    };
    let log_sum_weight = log_add_exp(first.log_sum_weight, second.log_sum_weight);
    // multinomial sampling between the two halves
    let take_second = if second.log_sum_weight == f64::NEG_INFINITY {
        false
    } else {
        rng.gen::<f64>() < (second.log_sum_weight - log_sum_weight).exp()
    };
    let proposal = if take_second { second.proposal } else { first.proposal };
    let divergent = second.divergent;
    let turning = second.turning || is_turning(&minus, &plus, inv_mass);

    Tree {
        minus,
        plus,
        proposal,
        log_sum_weight,
        accept_sum: first.accept_sum + second.accept_sum,
        n_leapfrog: first.n_leapfrog + second.n_leapfrog,
        divergent,
        turning,
    }
}

fn is_turning(minus: &Phase, plus: &Phase, inv_mass: &[f64]) -> bool {
    let mut span_dot_minus = 0.0;
    let mut span_dot_plus = 0.0;
    for i in 0..minus.z.len() {
        let span = plus.z[i] - minus.z[i];
        span_dot_minus += span * inv_mass[i] * minus.p[i];
        span_dot_plus += span * inv_mass[i] * plus.p[i];
    }
    span_dot_minus < 0.0 || span_dot_plus < 0.0
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Nesterov dual averaging of log ε toward a target acceptance rate.
struct DualAveraging {
    mu: f64,
    target: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    t: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            target,
            log_eps: eps.ln(),
            log_eps_bar: eps.ln(),
            h_bar: 0.0,
            t: 0.0,
        }
    }

    fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let frac = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob);
        self.log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp().clamp(1e-10, 1e7)
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp().clamp(1e-10, 1e7)
    }
}

/// Fast/slow/fast warmup windows (step size / metric+step size / step size).
struct WarmupSchedule {
    init_buffer: usize,
    warmup: usize,
    term_buffer: usize,
    window_ends: Vec<usize>,
}

impl WarmupSchedule {
    fn new(warmup: usize) -> Self {
        let (init_buffer, term_buffer, base_window) = if warmup >= 150 {
            (75usize, 50usize, 25usize)
        } else {
            let init = (warmup as f64 * 0.15).round() as usize;
            let term = (warmup as f64 * 0.10).round() as usize;
            (init, term, warmup.saturating_sub(init + term).max(1))
        };

        let mut window_ends = Vec::new();
        let slow_end = warmup.saturating_sub(term_buffer);
        let mut start = init_buffer;
        let mut size = base_window;
        while start < slow_end {
            let mut end = start + size;
            // widen the last window to absorb the remainder
            if end + 2 * size > slow_end {
                end = slow_end;
            }
            window_ends.push(end.min(slow_end));
            start = end;
            size *= 2;
        }
        WarmupSchedule { init_buffer, warmup, term_buffer, window_ends }
    }

    fn in_slow_window(&self, it: usize) -> bool {
        it >= self.init_buffer && it < self.warmup.saturating_sub(self.term_buffer)
    }

    fn is_slow_window_end(&self, it: usize) -> bool {
        self.window_ends.contains(&(it + 1))
    }
}

/// Streaming mean/variance.
struct Welford {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Shrunk variance estimate (toward 1e-3) as used for diagonal metrics.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.m2
            .iter()
            .map(|m2| {
                let var = m2 / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}
