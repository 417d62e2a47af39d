//! Concrete systems: the pendulum, FitzHugh–Nagumo and a scalar linear
//! test problem, plus a name registry for the CLI.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ode::{OdeSystem, ParamVector, StateVector};

pub const GRAVITY: f64 = 9.81;

/// Default initial condition for the pendulum experiments.
pub const PENDULUM_X0: [f64; 2] = [1.0, 0.0];
/// Default initial condition `(V, R)` for the FitzHugh–Nagumo experiments.
pub const FITZHUGH_NAGUMO_X0: [f64; 2] = [1.0, 0.0];

/// `y1' = y2`, `y2' = -(g / L) sin y1` with `theta = (L)`.
#[derive(Debug, Clone, Copy)]
pub struct PendulumSystem {
    pub g: f64,
}

impl Default for PendulumSystem {
    fn default() -> Self {
        Self { g: GRAVITY }
    }
}

impl PendulumSystem {
    /// Total energy per unit mass-length, conserved by the exact flow.
    pub fn energy(&self, x: &StateVector, length: f64) -> f64 {
        0.5 * x[1] * x[1] - (self.g / length) * x[0].cos()
    }
}

pub fn pendulum_field(x: &StateVector, theta: &ParamVector) -> Result<StateVector> {
    PendulumSystem::default().vector_field(x, theta)
}

impl OdeSystem for PendulumSystem {
    fn name(&self) -> &str {
        "pendulum"
    }
    fn dimension(&self) -> usize {
        2
    }
    fn param_dimension(&self) -> usize {
        1
    }
    fn param_names(&self) -> Vec<String> {
        vec!["L".into()]
    }
    fn validate_params(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: theta.len(),
            });
        }
        if !(theta[0] > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pendulum length must be positive, got {}",
                theta[0]
            )));
        }
        Ok(())
    }
    fn vector_field(&self, x: &StateVector, theta: &ParamVector) -> Result<StateVector> {
        self.validate_params(theta)?;
        let length = theta[0];
        Ok(StateVector::from_vec(vec![x[1], -(self.g / length) * x[0].sin()]))
    }
}

/// `V' = c (V - V^3/3 + R)`, `R' = -(V - a + b R) / c` with `theta = (a, b, c)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitzHughNagumoSystem;

pub fn fn_field(x: &StateVector, theta: &ParamVector) -> Result<StateVector> {
    FitzHughNagumoSystem.vector_field(x, theta)
}

impl OdeSystem for FitzHughNagumoSystem {
    fn name(&self) -> &str {
        "fitzhugh-nagumo"
    }
    fn dimension(&self) -> usize {
        2
    }
    fn param_dimension(&self) -> usize {
        3
    }
    fn param_names(&self) -> Vec<String> {
        vec!["a".into(), "b".into(), "c".into()]
    }
    fn validate_params(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: theta.len(),
            });
        }
        if theta[2] == 0.0 || !theta[2].is_finite() {
            return Err(Error::InvalidParameter(format!(
                "FitzHugh-Nagumo c must be nonzero, got {}",
                theta[2]
            )));
        }
        Ok(())
    }
    fn vector_field(&self, x: &StateVector, theta: &ParamVector) -> Result<StateVector> {
        self.validate_params(theta)?;
        let (v, r) = (x[0], x[1]);
        let (a, b, c) = (theta[0], theta[1], theta[2]);
        Ok(StateVector::from_vec(vec![
            c * (v - v * v * v / 3.0 + r),
            -(v - a + b * r) / c,
        ]))
    }
}

/// Scalar `x' = lambda x`, with `theta = (lambda)`. Has closed-form solutions for tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearTestSystem;

impl OdeSystem for LinearTestSystem {
    fn name(&self) -> &str {
        "linear-test"
    }
    fn dimension(&self) -> usize {
        1
    }
    fn param_dimension(&self) -> usize {
        1
    }
    fn param_names(&self) -> Vec<String> {
        vec!["lambda".into()]
    }
    fn vector_field(&self, x: &StateVector, theta: &ParamVector) -> Result<StateVector> {
        self.validate_params(theta)?;
        Ok(x * theta[0])
    }
}

pub const REGISTRY: [&str; 3] = ["pendulum", "fitzhugh-nagumo", "linear-test"];

pub fn system_by_name(name: &str) -> Option<Arc<dyn OdeSystem>> {
    match name {
        "pendulum" => Some(Arc::new(PendulumSystem::default())),
        "fitzhugh-nagumo" => Some(Arc::new(FitzHughNagumoSystem)),
        "linear-test" => Some(Arc::new(LinearTestSystem)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::reference_solution;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn v(xs: &[f64]) -> StateVector {
        StateVector::from_column_slice(xs)
    }

    #[test]
    fn pendulum_examples() {
        assert_eq!(pendulum_field(&v(&[0.0, 0.0]), &v(&[1.7])).unwrap(), v(&[0.0, 0.0]));
        let f = pendulum_field(&v(&[FRAC_PI_2, 0.0]), &v(&[9.81])).unwrap();
        assert_abs_diff_eq!(f[0], 0.0);
        assert_abs_diff_eq!(f[1], -1.0, epsilon = 1e-15);
        let f = pendulum_field(&v(&[1.0, 0.0]), &v(&[3.0])).unwrap();
        assert_abs_diff_eq!(f[1], -(9.81 / 3.0) * 1f64.sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(f[1], -2.751610120, epsilon = 1e-9);
    }

    #[test]
    fn pendulum_rejects_nonpositive_length() {
        assert!(matches!(
            pendulum_field(&v(&[0.1, 0.0]), &v(&[0.0])),
            Err(Error::InvalidParameter(_))
        ));
        assert!(pendulum_field(&v(&[0.1, 0.0]), &v(&[-2.0])).is_err());
    }

    #[test]
    fn fitzhugh_nagumo_examples() {
        assert_eq!(fn_field(&v(&[0.0, 0.0]), &v(&[0.0, 1.0, 1.0])).unwrap(), v(&[0.0, 0.0]));
        let f = fn_field(&v(&[1.0, 0.0]), &v(&[0.2, 0.1, -0.5])).unwrap();
        assert_abs_diff_eq!(f[0], -1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[1], 1.6, epsilon = 1e-15);
        let s3 = 3f64.sqrt();
        let f = fn_field(&v(&[s3, 0.0]), &v(&[s3, 0.37, 2.0])).unwrap();
        assert_eq!(f[1], 0.0);
    }

    #[test]
    fn fitzhugh_nagumo_rejects_zero_c() {
        assert!(matches!(
            fn_field(&v(&[1.0, 0.0]), &v(&[0.2, 0.1, 0.0])),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn registry_lookup() {
        for name in REGISTRY {
            assert_eq!(system_by_name(name).unwrap().name(), name);
        }
        assert!(system_by_name("lotka-volterra").is_none());
    }

    #[test]
    fn reference_conserves_pendulum_energy() {
        let p = PendulumSystem::default();
        let length = 3.0;
        let x0 = v(&PENDULUM_X0);
        let times: Vec<f64> = (1..=40).map(|t| t as f64).collect();
        let xs = reference_solution(&x0, 0.0, &v(&[length]), &times, 0.05 / 100.0, &p).unwrap();
        let e0 = p.energy(&x0, length);
        for x in &xs {
            let drift = ((p.energy(x, length) - e0) / e0).abs();
            assert!(drift < 1e-6, "energy drift {drift}");
        }
    }

    #[test]
    fn fitzhugh_nagumo_default_start_keeps_euler_bounded() {
        use crate::ode::{euler_trajectory, SolverGrid};
        let grid = SolverGrid::uniform(0.0, 1.0, 100, 0.2).unwrap();
        for theta in [[0.2, 0.1, -0.5], [0.5, 0.2, 1.0]] {
            let xs = euler_trajectory(&v(&FITZHUGH_NAGUMO_X0), &v(&theta), &grid, &FitzHughNagumoSystem).unwrap();
            assert!(xs.iter().all(|x| x.amax() < 3.0));
        }
    }

    proptest! {
        #[test]
        fn pendulum_field_is_odd(a in -6.0f64..6.0, b in -6.0f64..6.0, l in 0.1f64..10.0) {
            let theta = v(&[l]);
            let f = pendulum_field(&v(&[a, b]), &theta).unwrap();
            let g = pendulum_field(&v(&[-a, -b]), &theta).unwrap();
            prop_assert_eq!(f, -g);
        }
    }
}
