//! Target-density abstraction for gradient-based samplers.

use crate::error::{Error, Result};

/// Per-coordinate constraint handled by transform + log-Jacobian correction,
/// so constrained parameters sample on unconstrained space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// θ ∈ (0, ∞), sampled as z = ln θ.
    Log,
    /// θ ∈ (0, 1), sampled as z = logit θ.
    Logit,
}

impl Transform {
    pub fn to_constrained(self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Log => z.exp(),
            Transform::Logit => 1.0 / (1.0 + (-z).exp()),
        }
    }

    pub fn to_unconstrained(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => theta,
            Transform::Log => theta.ln(),
            Transform::Logit => (theta / (1.0 - theta)).ln(),
        }
    }

    /// dθ/dz at z.
    pub fn jacobian(self, z: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => z.exp(),
            Transform::Logit => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
        }
    }

    /// ln |dθ/dz| at z.
    pub fn ln_jacobian(self, z: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => z,
            Transform::Logit => {
                // ln σ(z) + ln σ(−z)
                -(softplus(z) + softplus(-z))
            }
        }
    }

    /// d/dz ln |dθ/dz| at z.
    pub fn d_ln_jacobian(self, z: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => 1.0,
            Transform::Logit => {
                let s = 1.0 / (1.0 + (-z).exp());
                1.0 - 2.0 * s
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// A differentiable log density on a constrained parameter space.
///
/// Implementations must be pure: `value_and_gradient` may read shared data but
/// never mutate it, so chains can evaluate the model concurrently.
pub trait LogDensityModel: Sync {
    fn dim(&self) -> usize;

    fn parameter_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("theta[{i}]")).collect()
    }

    /// Constraint transform per coordinate; identity unless overridden.
    fn transforms(&self) -> Vec<Transform> {
        vec![Transform::Identity; self.dim()]
    }

    /// Log density and gradient at a constrained parameter vector.
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Optional constrained starting point.
    fn initial_values(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Compare the model gradient against central finite differences at the given
/// constrained points; returns the worst hybrid relative error.
///
/// Step sizes respect the constraint transforms so probes stay in-domain.
pub fn validate_gradient(model: &dyn LogDensityModel, points: &[Vec<f64>], tol: f64) -> Result<f64> {
    let transforms = model.transforms();
    let mut worst = 0.0_f64;
    for theta in points {
        if theta.len() != model.dim() {
            return Err(Error::validation(format!(
                "gradient check point has dim {}, model has {}",
                theta.len(),
                model.dim()
            )));
        }
        let (_, grad) = model.value_and_gradient(theta)?;
        let mut probe = theta.clone();
        for i in 0..theta.len() {
            let h = match transforms[i] {
                Transform::Identity => 6e-6 * (1.0 + theta[i].abs()),
                Transform::Log => 6e-6 * theta[i],
                Transform::Logit => 6e-6 * theta[i].min(1.0 - theta[i]),
            };
            probe[i] = theta[i] + h;
            let (up, _) = model.value_and_gradient(&probe)?;
            probe[i] = theta[i] - h;
            let (dn, _) = model.value_and_gradient(&probe)?;
            probe[i] = theta[i];
            let fd = (up - dn) / (2.0 * h);
            let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1.0);
            worst = worst.max(err);
            if err > tol {
                return Err(Error::computation(format!(
                    "gradient check failed at coordinate {i}: analytic {} vs finite difference {fd} (error {err:.3e} > {tol:.1e})",
                    grad[i]
                )));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_round_trips() {
        for t in [Transform::Identity, Transform::Log, Transform::Logit] {
            for &z in &[-3.0, -0.2, 0.0, 1.4] {
                let theta = t.to_constrained(z);
                assert!((t.to_unconstrained(theta) - z).abs() < 1e-12);
                // jacobian consistency by finite differences
                let h = 1e-6;
                let fd = (t.to_constrained(z + h) - t.to_constrained(z - h)) / (2.0 * h);
                assert!((t.jacobian(z) - fd).abs() < 1e-8 * (1.0 + fd.abs()));
                assert!((t.ln_jacobian(z) - t.jacobian(z).ln()).abs() < 1e-10);
                let fd_lj = (t.ln_jacobian(z + h) - t.ln_jacobian(z - h)) / (2.0 * h);
                assert!((t.d_ln_jacobian(z) - fd_lj).abs() < 1e-8 * (1.0 + fd_lj.abs()));
            }
        }
    }

    struct Quadratic;

    impl LogDensityModel for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
            let lp = -0.5 * (theta[0] * theta[0] + 2.0 * theta[1] * theta[1]);
            Ok((lp, vec![-theta[0], -2.0 * theta[1]]))
        }
    }

    struct WrongGradient;

    impl LogDensityModel for WrongGradient {
        fn dim(&self) -> usize {
            1
        }
        fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((-0.5 * theta[0] * theta[0], vec![-1.5 * theta[0]]))
        }
    }

    #[test]
    fn gradient_validation() {
        let pts = vec![vec![0.3, -1.0], vec![2.0, 0.1]];
        let worst = validate_gradient(&Quadratic, &pts, 1e-5).unwrap();
        assert!(worst < 1e-6);
        assert!(validate_gradient(&WrongGradient, &[vec![1.0]], 1e-5).is_err());
    }
}
