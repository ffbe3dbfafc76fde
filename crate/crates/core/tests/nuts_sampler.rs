//! Sampler checks against analytic targets.

use stopstat::inference::{
    max_rhat, nuts_sample, rhat, LogDensityModel, NutsConfig, PosteriorDraws, Transform,
};
use stopstat::Result;

struct StdNormal {
    dim: usize,
}

impl LogDensityModel for StdNormal {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lp = -0.5 * theta.iter().map(|x| x * x).sum::<f64>();
        Ok((lp, theta.iter().map(|x| -x).collect()))
    }
}

/// 2-d normal with correlation rho.
struct Correlated {
    rho: f64,
}

impl LogDensityModel for Correlated {
    fn dim(&self) -> usize {
        2
    }
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r2 = 1.0 - self.rho * self.rho;
        let (x, y) = (theta[0], theta[1]);
        let lp = -0.5 / r2 * (x * x - 2.0 * self.rho * x * y + y * y);
        let gx = -(x - self.rho * y) / r2;
        let gy = -(y - self.rho * x) / r2;
        Ok((lp, vec![gx, gy]))
    }
}

struct Degenerate;

impl LogDensityModel for Degenerate {
    fn dim(&self) -> usize {
        1
    }
    fn value_and_gradient(&self, _theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((f64::NEG_INFINITY, vec![f64::NAN]))
    }
}

fn param_moments(draws: &PosteriorDraws, p: usize) -> (f64, f64) {
    let xs = draws.pooled_param(p);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn std_normal_moments_and_mixing() {
    let model = StdNormal { dim: 10 };
    let config = NutsConfig { chains: 4, warmup: 500, draws: 2000, seed: 7, ..Default::default() };
    let draws = nuts_sample(&model, &config).unwrap();

    for p in 0..10 {
        let (mean, var) = param_moments(&draws, p);
        assert!(mean.abs() < 0.05, "coordinate {p} mean {mean}");
        assert!((0.9..=1.1).contains(&var), "coordinate {p} variance {var}");
    }
    let r = rhat(&draws).unwrap();
    assert!(max_rhat(&r) < 1.05, "rhat {:?}", r);
}

#[test]
fn correlated_normal_recovers_rho() {
    let model = Correlated { rho: 0.9 };
    let config = NutsConfig { chains: 4, warmup: 500, draws: 2000, seed: 11, ..Default::default() };
    let draws = nuts_sample(&model, &config).unwrap();
    let xs = draws.pooled_param(0);
    let ys = draws.pooled_param(1);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
        sxy += (x - mx) * (y - my);
    }
    let r = sxy / (sxx * syy).sqrt();
    assert!((r - 0.9).abs() < 0.05, "sample correlation {r}");
}

#[test]
fn degenerate_target_rejected_at_init() {
    let err = nuts_sample(&Degenerate, &NutsConfig { chains: 1, warmup: 10, draws: 10, ..Default::default() })
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("initialization"), "unexpected error: {msg}");
}

#[test]
fn identical_seeds_are_bit_identical() {
    let model = StdNormal { dim: 3 };
    let config = NutsConfig { chains: 2, warmup: 200, draws: 300, seed: 42, ..Default::default() };
    let a = nuts_sample(&model, &config).unwrap();
    let b = nuts_sample(&model, &config).unwrap();
    assert_eq!(a, b, "same seed must reproduce draws byte for byte");

    let c = nuts_sample(&model, &NutsConfig { seed: 43, ..config }).unwrap();
    assert_ne!(a.values, c.values);
}

#[test]
fn one_dim_normal_passes_kolmogorov_smirnov() {
    let model = StdNormal { dim: 1 };
    let config = NutsConfig { chains: 5, warmup: 500, draws: 2000, seed: 3, ..Default::default() };
    let draws = nuts_sample(&model, &config).unwrap();
    let mut xs = draws.pooled_param(0);
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let mut ks = 0.0_f64;
    for (i, x) in xs.iter().enumerate() {
        let cdf = 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
        let lo = i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64;
        ks = ks.max((cdf - lo).abs()).max((cdf - hi).abs());
    }
    // 1% critical value for the KS statistic: 1.63 / sqrt(n). MCMC draws are
    // autocorrelated, so this is a smoke test at the stated threshold, not an
    // exact level-1% test.
    let critical = 1.63 / (n as f64).sqrt();
    assert!(ks < critical, "KS statistic {ks:.5} >= {critical:.5} (n = {n})");
}

#[test]
fn energy_is_conserved_at_small_step_size() {
    // quadratic target: leapfrog drift over one trajectory should be tiny
    struct Quad;
    impl LogDensityModel for Quad {
        fn dim(&self) -> usize {
            2
        }
        fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((
                -0.5 * (theta[0] * theta[0] + 4.0 * theta[1] * theta[1]),
                vec![-theta[0], -4.0 * theta[1]],
            ))
        }
    }
    // hand-rolled leapfrog against the model, 1000 steps of eps = 1e-3
    let model = Quad;
    let mut z = vec![0.7, -0.3];
    let mut p = vec![0.2, 0.5];
    let (lp0, mut grad) = model.value_and_gradient(&z).unwrap();
    let h0 = -lp0 + 0.5 * (p[0] * p[0] + p[1] * p[1]);
    let eps = 1e-3;
    let mut h_final = h0;
    for _ in 0..1000 {
        for i in 0..2 {
            p[i] += 0.5 * eps * grad[i];
        }
        for i in 0..2 {
            z[i] += eps * p[i];
        }
        let (lp, g) = model.value_and_gradient(&z).unwrap();
        grad = g;
        for i in 0..2 {
            p[i] += 0.5 * eps * grad[i];
        }
        h_final = -lp + 0.5 * (p[0] * p[0] + p[1] * p[1]);
    }
    assert!((h_final - h0).abs() < 1e-6, "Hamiltonian drift {}", (h_final - h0).abs());
}

#[test]
fn draws_round_trip_binary_and_csv() {
    let model = StdNormal { dim: 2 };
    let config = NutsConfig { chains: 2, warmup: 100, draws: 50, seed: 5, ..Default::default() };
    let draws = nuts_sample(&model, &config).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.draws");
    let r = rhat(&draws).unwrap();
    draws.save(&path, Some(r)).unwrap();
    let loaded = PosteriorDraws::load(&path).unwrap();
    assert_eq!(draws, loaded);

    let mut csv_buf = Vec::new();
    draws.write_csv(&mut csv_buf).unwrap();
    let text = String::from_utf8(csv_buf).unwrap();
    assert!(text.starts_with("chain,draw,theta[0],theta[1]"));
    assert_eq!(text.lines().count(), 1 + 2 * 50);

    let meta: stopstat::inference::DrawsMetadata =
        serde_json::from_str(&std::fs::read_to_string(path.with_extension("draws.meta.json")).unwrap()).unwrap();
    assert_eq!(meta.seed, 5);
    assert!(meta.rhat.is_some());
}

#[test]
fn transforms_sample_constrained_spaces() {
    // lognormal via Log transform: theta ~ LogNormal(0, 1)
    struct LogNormalModel;
    impl LogDensityModel for LogNormalModel {
        fn dim(&self) -> usize {
            1
        }
        fn transforms(&self) -> Vec<Transform> {
            vec![Transform::Log]
        }
        fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
            // density of LogNormal(0,1) in theta
            let t = theta[0];
            let lt = t.ln();
            let lp = -lt - 0.5 * lt * lt;
            let grad = -(1.0 + lt) / t;
            Ok((lp, vec![grad]))
        }
        fn initial_values(&self) -> Option<Vec<f64>> {
            Some(vec![1.0])
        }
    }
    let config = NutsConfig { chains: 4, warmup: 500, draws: 1500, seed: 9, ..Default::default() };
    let draws = nuts_sample(&LogNormalModel, &config).unwrap();
    let xs = draws.pooled_param(0);
    assert!(xs.iter().all(|&x| x > 0.0));
    // E[ln X] = 0, Var[ln X] = 1
    let logs: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 0.06, "mean of logs {mean}");
    assert!((var - 1.0).abs() < 0.12, "var of logs {var}");
}

fn erf(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26, |error| < 1.5e-7: fine for KS comparisons
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}
