//! Markov prior on discretization-error standard deviations.
//!
//! Over each fine step of the solver the error scale evolves as
//! `sigma <- m * sigma + |local error|` with `m ~ Gamma(shape, scale)`
//! drawn independently per step. The same module hosts the step-size
//! convergence harness ([`rate_check`]).

use std::fmt;
use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::ode::{integrate_interval, OdeSystem, ParamVector, SolverGrid, StateVector};
use crate::rng::{Purpose, Substreams};
use crate::stats;

/// Componentwise error standard deviations; `diag(sigma^2)` is the error
/// covariance.
#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SigmaVector(SmallVec<[f64; 4]>);

impl SigmaVector {
    pub fn zeros(dim: usize) -> Self {
        Self(SmallVec::from_elem(0.0, dim))
    }

    /// Checked constructor: every component must be finite and nonnegative.
    pub fn new(components: &[f64]) -> Result<Self> {
        if let Some(c) = components.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "sigma components must be finite and nonnegative, got {c}"
            )));
        }
        Ok(Self(SmallVec::from_slice(components)))
    }

    pub fn filled(dim: usize, value: f64) -> Result<Self> {
        Self::new(&vec![value; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|s| s * s).sum()
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|c| c.is_finite() && *c >= 0.0)
    }

    fn check_dim(&self, other: &SigmaVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }
}

impl FromIterator<f64> for SigmaVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl Index<usize> for SigmaVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl fmt::Debug for SigmaVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("SigmaVector").field(&self.as_slice()).finish()
    }
}

/// `M = m I` with `m ~ Gamma(shape, scale)`, so `E[m] = shape * scale`.
#[derive(Debug, Clone, Copy)]
pub struct GammaMultiplierPrior {
    shape: f64,
    scale: f64,
    dist: Gamma<f64>,
}

impl PartialEq for GammaMultiplierPrior {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.scale == other.scale
    }
}

impl GammaMultiplierPrior {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma prior needs positive finite shape and scale, got ({shape}, {scale})"
            )));
        }
        let dist =
            Gamma::new(shape, scale).map_err(|e| Error::InvalidParameter(format!("gamma({shape}, {scale}): {e}")))?;
        Ok(Self { shape, scale, dist })
    }

    /// Prior with unit mean and scale `c h^2`, which satisfies
    /// `E||I - M||_F^2 = d c h^2`.
    pub fn unit_mean_schedule(c: f64, h: f64) -> Result<Self> {
        let scale = c * h * h;
        Self::new(1.0 / scale, scale)
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn variance(&self) -> f64 {
        self.shape * self.scale * self.scale
    }

    /// `E||I - m I||_F^2` for dimension `dim`.
    pub fn expected_frobenius_deviation(&self, dim: usize) -> f64 {
        dim as f64 * ((1.0 - self.mean()).powi(2) + self.variance())
    }

    pub fn sample_multiplier<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.dist.sample(rng)
    }
}

/// Prior on `sigma` at the initial grid node.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitialSigmaPrior {
    /// Point mass at zero.
    #[default]
    Zero,
    /// Point mass at a given vector.
    Fixed { sigma: Vec<f64> },
    /// Point mass at `c0 * h^exponent * (1, ..., 1)`.
    Scaled { c0: f64, exponent: f64 },
}

impl InitialSigmaPrior {
    /// Draw `sigma_{t_0}`. All supported modes are point masses, so no
    /// randomness is consumed.
    pub fn sample(&self, dim: usize, h: f64) -> Result<SigmaVector> {
        match self {
            InitialSigmaPrior::Zero => Ok(SigmaVector::zeros(dim)),
            InitialSigmaPrior::Fixed { sigma } => {
                if sigma.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: sigma.len(),
                    });
                }
                SigmaVector::new(sigma)
            }
            InitialSigmaPrior::Scaled { c0, exponent } => SigmaVector::filled(dim, c0 * h.powf(*exponent)),
        }
    }

    /// Exponent `beta` with `E||sigma_0||^2 = O(h^(2 beta))`; infinite for zero.
    pub fn rate_exponent(&self) -> f64 {
        match self {
            InitialSigmaPrior::Zero => f64::INFINITY,
            InitialSigmaPrior::Fixed { sigma } if sigma.iter().all(|s| *s == 0.0) => f64::INFINITY,
            InitialSigmaPrior::Fixed { .. } => 0.0,
            InitialSigmaPrior::Scaled { c0, exponent } => {
                if *c0 == 0.0 {
                    f64::INFINITY
                } else {
                    *exponent
                }
            }
        }
    }
}

/// One fine step: `m * sigma + |local error|`.
pub fn transition_sigma(sigma: &SigmaVector, m: f64, abs_local_error: &SigmaVector) -> Result<SigmaVector> {
    sigma.check_dim(abs_local_error)?;
    if !(m > 0.0) {
        return Err(Error::InvalidParameter(format!("multiplier must be positive, got {m}")));
    }
    Ok(sigma
        .0
        .iter()
        .zip(abs_local_error.0.iter())
        .map(|(s, a)| m * s + a)
        .collect())
}

/// Apply one transition per fine step of an observation interval, with an
/// independent multiplier for each.
pub fn propagate_interval<R: Rng + ?Sized>(
    sigma: &SigmaVector,
    abs_errors: &[SigmaVector],
    prior: &GammaMultiplierPrior,
    rng: &mut R,
) -> Result<SigmaVector> {
    let mut current = sigma.clone();
    for a in abs_errors {
        current.check_dim(a)?;
        let m = prior.sample_multiplier(rng);
        for (s, e) in current.0.iter_mut().zip(a.0.iter()) {
            *s = m * *s + e;
        }
    }
    Ok(current)
}

/// Inputs of the step-size convergence harness.
#[derive(Clone)]
pub struct RateCheckSpec<'a> {
    pub system: &'a dyn OdeSystem,
    pub theta: ParamVector,
    pub x0: StateVector,
    pub start: f64,
    /// Length of one observation interval; must be a multiple of every `h`.
    pub interval: f64,
    pub n_intervals: usize,
    pub step_sizes: Vec<f64>,
    /// Gamma scale `c h^2` with shape `1 / (c h^2)`.
    pub schedule_c: f64,
    pub init: InitialSigmaPrior,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheckRow {
    pub h: f64,
    /// Monte-Carlo estimate of `E||sigma_{t_N}||^2`.
    pub mean_sq_norm: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheckReport {
    pub rows: Vec<RateCheckRow>,
    /// `None` when every estimate is exactly zero.
    pub fitted_slope: Option<f64>,
    pub expected_slope: f64,
    pub degenerate_zero: bool,
    /// The harness uses the Euler-minus-Runge estimate, not the exact local error.
    pub note: String,
}

/// Order of the explicit Euler method.
pub const EULER_ORDER: f64 = 1.0;

/// Estimate `E||sigma_{t_N}||^2` under the prior for each step size and fit
/// the log-log slope against `h`.
pub fn rate_check(spec: &RateCheckSpec<'_>) -> Result<RateCheckReport> {
    if spec.step_sizes.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "rate check needs at least 3 step sizes, got {}",
            spec.step_sizes.len()
        )));
    }
    if spec.samples < 2 {
        return Err(Error::InsufficientData("rate check needs at least 2 samples".into()));
    }
    let dim = spec.system.dimension();
    let streams = Substreams::new(spec.seed);
    let mut rows = Vec::with_capacity(spec.step_sizes.len());
    for (hi, &h) in spec.step_sizes.iter().enumerate() {
        let grid = SolverGrid::uniform(spec.start, spec.interval, spec.n_intervals, h)?;
        let prior = GammaMultiplierPrior::unit_mean_schedule(spec.schedule_c, h)?;
        let mut abs_errors = Vec::with_capacity(grid.n_intervals() * grid.steps_per_interval());
        let mut x = spec.x0.clone();
        for i in 0..grid.n_intervals() {
            let (next, est) = integrate_interval(&x, &spec.theta, &grid, i, spec.system)?;
            abs_errors.extend(est.into_iter().map(|e| e.componentwise_abs));
            x = next;
        }
        let sigma0 = spec.init.sample(dim, h)?;
        let norms: Vec<f64> = (0..spec.samples)
            .into_par_iter()
            .map(|s| {
                let mut rng = streams.rng(Purpose::RateCheck, hi as u64, s as u64);
                propagate_interval(&sigma0, &abs_errors, &prior, &mut rng).map(|sig| sig.norm_squared())
            })
            .collect::<Result<_>>()?;
        let mean = stats::mean(&norms);
        let std_error = (stats::sample_variance(&norms) / norms.len() as f64).sqrt();
        rows.push(RateCheckRow {
            h,
            mean_sq_norm: mean,
            std_error,
        });
    }
    let degenerate_zero = rows.iter().all(|r| r.mean_sq_norm == 0.0);
    let fitted_slope = if degenerate_zero {
        None
    } else {
        let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let ms: Vec<f64> = rows.iter().map(|r| r.mean_sq_norm).collect();
        Some(stats::loglog_slope(&hs, &ms)?)
    };
    Ok(RateCheckReport {
        rows,
        fitted_slope,
        expected_slope: 2.0 * EULER_ORDER.min(spec.init.rate_exponent()),
        degenerate_zero,
        note: "local errors estimated as Euler minus Runge".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PendulumSystem;
    use crate::ode::FnSystem;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sv(xs: &[f64]) -> SigmaVector {
        SigmaVector::new(xs).unwrap()
    }

    fn moments(prior: &GammaMultiplierPrior, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<f64> = (0..n).map(|_| prior.sample_multiplier(&mut rng)).collect();
        (stats::mean(&draws), stats::sample_variance(&draws))
    }

    #[test]
    fn sigma_vector_rejects_negative_and_nan() {
        assert!(SigmaVector::new(&[0.0, 1.0]).is_ok());
        assert!(SigmaVector::new(&[-0.1]).is_err());
        assert!(SigmaVector::new(&[f64::NAN]).is_err());
    }

    #[test]
    fn prior_rejects_nonpositive() {
        assert!(GammaMultiplierPrior::new(335.0, 0.0).is_err());
        assert!(GammaMultiplierPrior::new(0.0, 1.0).is_err());
        assert!(GammaMultiplierPrior::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn tuned_pair_has_mean_near_one() {
        let prior = GammaMultiplierPrior::new(335.0, 0.003).unwrap();
        assert_abs_diff_eq!(prior.mean(), 1.005, epsilon = 1e-12);
        let n = 1_000_000;
        let (m, var) = moments(&prior, n, 7);
        let se = (var / n as f64).sqrt();
        assert!((m - 1.005).abs() <= 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn variance_vanishes_for_large_shape_at_unit_mean() {
        let n = 200_000;
        let mut last = f64::INFINITY;
        for alpha in [10.0, 100.0, 1000.0, 10000.0] {
            let prior = GammaMultiplierPrior::new(alpha, 1.0 / alpha).unwrap();
            let (_, var) = moments(&prior, n, 11);
            assert!(var < last);
            assert!(
                (var - 1.0 / alpha).abs() < 0.05 * (1.0 / alpha),
                "alpha {alpha}: var {var}"
            );
            last = var;
        }
    }

    #[test]
    fn gamma_moments_randomized_pairs() {
        let mut pick = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        for i in 0..5 {
            let shape = rand::Rng::gen_range(&mut pick, 0.5..500.0);
            let scale = rand::Rng::gen_range(&mut pick, 0.001..2.0);
            let prior = GammaMultiplierPrior::new(shape, scale).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
            let draws: Vec<f64> = (0..n).map(|_| prior.sample_multiplier(&mut rng)).collect();
            let m = stats::mean(&draws);
            let var = stats::sample_variance(&draws);
            let se_mean = (var / n as f64).sqrt();
            assert!(
                (m - prior.mean()).abs() <= 4.0 * se_mean,
                "pair {i}: mean {m} vs {}",
                prior.mean()
            );
            // stderr of the sample variance: sqrt((mu4 - var^2) / n)
            let mu4 = draws.iter().map(|d| (d - m).powi(4)).sum::<f64>() / n as f64;
            let se_var = ((mu4 - var * var) / n as f64).sqrt();
            assert!(
                (var - prior.variance()).abs() <= 4.0 * se_var,
                "pair {i}: var {var} vs {}",
                prior.variance()
            );
        }
    }

    #[test]
    fn frobenius_deviation_matches_closed_form() {
        let n = 500_000;
        for &(shape, scale, dim) in &[(335.0, 0.003, 2usize), (4.0, 0.2, 3), (1.0 / 0.0025, 0.0025, 2)] {
            let prior = GammaMultiplierPrior::new(shape, scale).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let devs: Vec<f64> = (0..n)
                .map(|_| {
                    let m = prior.sample_multiplier(&mut rng);
                    dim as f64 * (1.0 - m).powi(2)
                })
                .collect();
            let mc = stats::mean(&devs);
            let se = (stats::sample_variance(&devs) / n as f64).sqrt();
            let exact = prior.expected_frobenius_deviation(dim);
            assert!((mc - exact).abs() <= 4.0 * se, "mc {mc} exact {exact} se {se}");
        }
        let sched = GammaMultiplierPrior::unit_mean_schedule(1.0, 0.05).unwrap();
        assert_abs_diff_eq!(
            sched.expected_frobenius_deviation(2),
            2.0 * 0.05 * 0.05,
            epsilon = 1e-15
        );
    }

    #[test]
    fn transition_examples() {
        assert_eq!(
            transition_sigma(&sv(&[0.0, 0.0]), 1.3, &sv(&[0.0, 0.0])).unwrap(),
            sv(&[0.0, 0.0])
        );
        let s = transition_sigma(&sv(&[1.0, 1.0]), 1.0, &sv(&[0.005, 0.01])).unwrap();
        assert_abs_diff_eq!(s[0], 1.005, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 1.01, epsilon = 1e-15);
        let s = transition_sigma(&sv(&[2.0]), 0.5, &sv(&[0.1])).unwrap();
        assert_abs_diff_eq!(s[0], 1.1, epsilon = 1e-15);
        assert!(matches!(
            transition_sigma(&sv(&[1.0]), 1.0, &sv(&[0.1, 0.2])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn propagate_base_cases() {
        let prior = GammaMultiplierPrior::new(4.0, 0.3).unwrap();
        let sigma = sv(&[0.4, 0.1]);
        let a = sv(&[0.02, 0.03]);
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let once = propagate_interval(&sigma, std::slice::from_ref(&a), &prior, &mut r1).unwrap();
        let m = prior.sample_multiplier(&mut r2);
        assert_eq!(once, transition_sigma(&sigma, m, &a).unwrap());

        let zero = SigmaVector::zeros(2);
        let out = propagate_interval(&zero, &vec![zero.clone(); 20], &prior, &mut r1).unwrap();
        assert_eq!(out, zero);
        assert!(propagate_interval(&zero, &[sv(&[1.0])], &prior, &mut r1).is_err());
    }

    #[test]
    fn propagate_mean_matches_expectation_recursion() {
        // E[sigma_{j+1}] = (shape * scale) E[sigma_j] + |L_j|
        let prior = GammaMultiplierPrior::new(5.0, 0.2).unwrap();
        let sigma0 = sv(&[0.5]);
        let errs: Vec<SigmaVector> = [0.01, 0.03, 0.0, 0.02, 0.05].iter().map(|e| sv(&[*e])).collect();
        let mut expected = 0.5;
        for e in &errs {
            expected = prior.mean() * expected + e[0];
        }
        let n = 400_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<f64> = (0..n)
            .map(|_| propagate_interval(&sigma0, &errs, &prior, &mut rng).unwrap()[0])
            .collect();
        let m = stats::mean(&draws);
        let se = (stats::sample_variance(&draws) / n as f64).sqrt();
        assert!((m - expected).abs() <= 3.0 * se, "mc {m} exact {expected} se {se}");
    }

    proptest! {
        #[test]
        fn transitions_stay_nonnegative(
            sigma in prop::collection::vec(0.0f64..10.0, 3),
            steps in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 3), 1e-6f64..10.0), 1..30),
        ) {
            let mut s = sv(&sigma);
            for (err, m) in steps {
                let a: SigmaVector = err.iter().map(|e| e.abs()).collect();
                s = transition_sigma(&s, m, &a).unwrap();
                prop_assert!(s.is_valid());
            }
        }

        #[test]
        fn transition_is_monotone(
            base in prop::collection::vec(0.0f64..5.0, 2),
            bump in prop::collection::vec(0.0f64..5.0, 2),
            err in prop::collection::vec(0.0f64..1.0, 2),
            m in 1e-6f64..5.0,
        ) {
            let lo = sv(&base);
            let hi: SigmaVector = base.iter().zip(&bump).map(|(b, d)| b + d).collect();
            let a = sv(&err);
            let tl = transition_sigma(&lo, m, &a).unwrap();
            let th = transition_sigma(&hi, m, &a).unwrap();
            for c in 0..2 {
                prop_assert!(tl[c] <= th[c]);
            }
        }
    }

    fn pendulum_spec(sys: &dyn OdeSystem, init: InitialSigmaPrior) -> RateCheckSpec<'_> {
        RateCheckSpec {
            system: sys,
            theta: ParamVector::from_vec(vec![3.0]),
            x0: StateVector::from_vec(vec![1.0, 0.0]),
            start: 0.0,
            interval: 1.0,
            n_intervals: 5,
            step_sizes: vec![0.1, 0.05, 0.025, 0.0125],
            schedule_c: 1.0,
            init,
            samples: 2000,
            seed: 17,
        }
    }

    #[test]
    fn rate_check_zero_init_slope_two() {
        let p = PendulumSystem::default();
        let report = rate_check(&pendulum_spec(&p, InitialSigmaPrior::Zero)).unwrap();
        assert_eq!(report.expected_slope, 2.0);
        let slope = report.fitted_slope.unwrap();
        assert!((slope - 2.0).abs() <= 0.3, "slope {slope}");
        assert!(report.rows.iter().all(|r| r.mean_sq_norm > 0.0));
    }

    #[test]
    fn rate_check_scaled_init_slope_one() {
        let p = PendulumSystem::default();
        let init = InitialSigmaPrior::Scaled {
            c0: 10.0,
            exponent: 0.5,
        };
        let report = rate_check(&pendulum_spec(&p, init)).unwrap();
        assert_eq!(report.expected_slope, 1.0);
        let slope = report.fitted_slope.unwrap();
        assert!((slope - 1.0).abs() <= 0.3, "slope {slope}");
    }

    #[test]
    fn rate_check_zero_field_is_degenerate() {
        let zero = FnSystem::new("zero", 2, 1, |_x: &StateVector, _t: &ParamVector| StateVector::zeros(2));
        let report = rate_check(&pendulum_spec(&zero, InitialSigmaPrior::Zero)).unwrap();
        assert!(report.degenerate_zero);
        assert!(report.fitted_slope.is_none());
    }

    #[test]
    fn rate_check_needs_three_step_sizes() {
        let p = PendulumSystem::default();
        let mut spec = pendulum_spec(&p, InitialSigmaPrior::Zero);
        spec.step_sizes = vec![0.1, 0.05];
        assert!(matches!(rate_check(&spec), Err(Error::InsufficientData(_))));
    }
}
