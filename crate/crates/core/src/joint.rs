//! Joint inference of ODE parameters and error scales.
//!
//! The latent state is augmented with the parameter, which follows a
//! constant transition. Each particle carries its own Euler trajectory, so
//! the local-error estimates that drive the error prior depend on that
//! particle's parameter.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::error_prior::SigmaVector;
use crate::observation::log_likelihood;
use crate::ode::{integrate_interval, ParamVector, StateVector};
use crate::particle::{run_ssm, ErrorModel, FilterConfig, FilterOutput, Particle, Problem, StateSpaceModel};
use crate::stats::{self, format_sig9};

/// Minimum acceptance probability for rejection sampling a truncated normal.
pub const MIN_ACCEPTANCE: f64 = 1e-6;

/// Prior on one parameter component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamMarginal {
    Normal { mean: f64, std: f64 },
    TruncatedNormal { mean: f64, std: f64, lo: f64, hi: f64 },
    PointMass { value: f64 },
}

impl ParamMarginal {
    fn validate(&self) -> Result<()> {
        match *self {
            ParamMarginal::Normal { mean, std } => {
                if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
                    return Err(Error::Config(format!(
                        "normal prior needs finite mean and std > 0, got ({mean}, {std})"
                    )));
                }
            }
            ParamMarginal::TruncatedNormal { mean, std, lo, hi } => {
                if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
                    return Err(Error::Config(format!("truncated normal needs std > 0, got {std}")));
                }
                if !(lo < hi) {
                    return Err(Error::Config(format!(
                        "truncation bounds must satisfy lo < hi, got [{lo}, {hi}]"
                    )));
                }
                let n = Normal::new(mean, std).map_err(|e| Error::Config(e.to_string()))?;
                let accept = n.cdf(hi) - n.cdf(lo);
                if accept < MIN_ACCEPTANCE {
                    return Err(Error::Config(format!(
                        "truncated normal on [{lo}, {hi}] accepts only {accept:e} of draws"
                    )));
                }
            }
            ParamMarginal::PointMass { value } => {
                if !value.is_finite() {
                    return Err(Error::Config("point-mass prior needs a finite value".into()));
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ParamMarginal::Normal { mean, std } => mean + std * rng.sample::<f64, _>(StandardNormal),
            ParamMarginal::TruncatedNormal { mean, std, lo, hi } => loop {
                let v = mean + std * rng.sample::<f64, _>(StandardNormal);
                if (lo..=hi).contains(&v) {
                    break v;
                }
            },
            ParamMarginal::PointMass { value } => value,
        }
    }
}

/// Independent per-component prior on the ODE parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPrior {
    components: Vec<ParamMarginal>,
}

impl ParamPrior {
    pub fn new(components: Vec<ParamMarginal>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("parameter prior has no components".into()));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(Self { components })
    }

    /// Point mass at `theta`.
    pub fn point_mass(theta: &ParamVector) -> Result<Self> {
        Self::new(theta.iter().map(|&value| ParamMarginal::PointMass { value }).collect())
    }

    pub fn components(&self) -> &[ParamMarginal] {
        &self.components
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }
}

pub fn sample_param_prior<R: Rng + ?Sized>(prior: &ParamPrior, rng: &mut R) -> ParamVector {
    DVector::from_iterator(prior.dimension(), prior.components.iter().map(|c| c.sample(rng)))
}

/// `(sigma, theta)` plus the particle's cached Euler state.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedParticle {
    pub sigma: SigmaVector,
    pub theta: ParamVector,
    /// Euler solution for `theta` at the current node.
    pub state: StateVector,
    /// False once the parameter is invalid or its trajectory diverged.
    pub alive: bool,
}

impl Particle for AugmentedParticle {
    type Record = SigmaVector;
    fn record(&self) -> SigmaVector {
        self.sigma.clone()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JointOptions {
    /// Standard deviation of Gaussian jitter added to every parameter
    /// component at each prediction. Off by default; it departs from the
    /// constant parameter transition and breaks cache consistency.
    pub jitter: Option<f64>,
}

struct JointModel<'a> {
    problem: &'a Problem,
    error_model: &'a ErrorModel,
    param_prior: &'a ParamPrior,
    options: &'a JointOptions,
}

impl StateSpaceModel for JointModel<'_> {
    type State = AugmentedParticle;

    fn initial(&self, _k: usize, rng: &mut ChaCha8Rng) -> Result<AugmentedParticle> {
        let sigma = self
            .error_model
            .initial_sigma(self.problem.dimension(), self.problem.grid.h())?;
        let theta = sample_param_prior(self.param_prior, rng);
        let alive = self.problem.system.validate_params(&theta).is_ok();
        Ok(AugmentedParticle {
            sigma,
            theta,
            state: self.problem.x0.clone(),
            alive,
        })
    }

    fn transition(&self, p: &AugmentedParticle, interval: usize, rng: &mut ChaCha8Rng) -> Result<AugmentedParticle> {
        if !p.alive {
            return Ok(p.clone());
        }
        let (state, estimates) = match integrate_interval(
            &p.state,
            &p.theta,
            &self.problem.grid,
            interval,
            self.problem.system.as_ref(),
        ) {
            Ok(r) => r,
            Err(_) => {
                return Ok(AugmentedParticle {
                    alive: false,
                    ..p.clone()
                })
            }
        };
        let abs: Vec<SigmaVector> = estimates.into_iter().map(|e| e.componentwise_abs).collect();
        let sigma = self.error_model.advance(&p.sigma, &abs, rng)?;
        let mut theta = p.theta.clone();
        let mut alive = true;
        if let Some(s) = self.options.jitter {
            for v in theta.iter_mut() {
                *v += s * rng.sample::<f64, _>(StandardNormal);
            }
            alive = self.problem.system.validate_params(&theta).is_ok();
        }
        Ok(AugmentedParticle {
            sigma,
            theta,
            state,
            alive,
        })
    }

    fn log_density(&self, p: &AugmentedParticle, _node: usize, y: &DVector<f64>) -> Result<f64> {
        if !p.alive {
            return Ok(f64::NEG_INFINITY);
        }
        log_likelihood(y, &p.state, &p.sigma, &self.problem.operator)
    }
}

#[derive(Debug, Clone)]
pub struct JointOutput {
    /// Final particles (uniformly weighted).
    pub particles: Vec<AugmentedParticle>,
    /// Smoothed error-scale clouds and the log marginal likelihood.
    pub smoothed: FilterOutput,
}

impl JointOutput {
    pub fn thetas(&self) -> Vec<ParamVector> {
        self.particles.iter().map(|p| p.theta.clone()).collect()
    }

    pub fn log_marginal(&self) -> f64 {
        self.smoothed.log_marginal
    }

    /// Number of distinct parameter values left in the cloud.
    pub fn unique_thetas(&self) -> usize {
        let mut keys: Vec<Vec<u64>> = self
            .particles
            .iter()
            .map(|p| p.theta.iter().map(|v| v.to_bits()).collect())
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    }
}

/// Filter the augmented state `(sigma, theta)`.
pub fn run_joint_filter(
    problem: &Problem,
    error_model: &ErrorModel,
    param_prior: &ParamPrior,
    config: &FilterConfig,
    options: &JointOptions,
) -> Result<JointOutput> {
    if param_prior.dimension() != problem.system.param_dimension() {
        return Err(Error::DimensionMismatch {
            expected: problem.system.param_dimension(),
            found: param_prior.dimension(),
        });
    }
    let model = JointModel {
        problem,
        error_model,
        param_prior,
        options,
    };
    let run = run_ssm(&model, problem.grid.times(), problem.node_observations(), config)?;
    Ok(JointOutput {
        smoothed: FilterOutput::from_history(&run.history, run.log_marginal),
        particles: run.particles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    pub histogram: Histogram,
}

pub const HISTOGRAM_BINS: usize = 30;

/// Per-component summaries of a uniformly weighted parameter cloud.
pub fn posterior_param_summary(cloud: &[ParamVector], names: &[String]) -> Result<Vec<ParamSummary>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let dim = cloud[0].len();
    (0..dim)
        .map(|c| {
            let values: Vec<f64> = cloud.iter().map(|t| t[c]).collect();
            let mean = stats::mean(&values);
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
            let sorted = stats::sorted(&values);
            let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
            let width = if hi > lo {
                (hi - lo) / HISTOGRAM_BINS as f64
            } else {
                1.0
            };
            let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| lo + i as f64 * width).collect();
            let mut counts = vec![0usize; HISTOGRAM_BINS];
            for v in &values {
                let b = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
                counts[b] += 1;
            }
            Ok(ParamSummary {
                name: names.get(c).cloned().unwrap_or_else(|| format!("theta{}", c + 1)),
                mean,
                std: var.sqrt(),
                q025: stats::quantile_sorted(&sorted, 0.025),
                q500: stats::quantile_sorted(&sorted, 0.5),
                q975: stats::quantile_sorted(&sorted, 0.975),
                histogram: Histogram { edges, counts },
            })
        })
        .collect()
}

/// CSV `param_name,particle_index,value`.
pub fn write_theta_csv<W: Write>(cloud: &[ParamVector], names: &[String], mut w: W) -> Result<()> {
    writeln!(w, "param_name,particle_index,value")?;
    for (c, name) in names.iter().enumerate() {
        for (k, theta) in cloud.iter().enumerate() {
            writeln!(w, "{},{},{}", name, k, format_sig9(theta[c]))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_prior::GammaMultiplierPrior;
    use crate::models::PendulumSystem;
    use crate::observation::{generate_observations, ObservationOperator};
    use crate::ode::{euler_trajectory, SolverGrid};
    use crate::particle::run_filter;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn dv(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn pendulum_problem(seed: u64, n_obs: usize) -> Problem {
        let sys = PendulumSystem::default();
        let op = ObservationOperator::diagonal(&[3.0, 3.0], &[1.0, 1.0]).unwrap();
        let times: Vec<f64> = (1..=n_obs).map(|t| t as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = generate_observations(&dv(&[1.0, 0.0]), 0.0, &dv(&[3.0]), &op, &times, 5e-4, &sys, &mut rng).unwrap();
        let grid = SolverGrid::uniform(0.0, 1.0, n_obs, 0.05).unwrap();
        Problem::new(Arc::new(sys), dv(&[1.0, 0.0]), grid, obs, op).unwrap()
    }

    #[test]
    fn truncated_draws_respect_bounds() {
        let prior = ParamPrior::new(vec![ParamMarginal::TruncatedNormal {
            mean: 1.0,
            std: 1.0,
            lo: -0.1,
            hi: 1.0,
        }])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let v = sample_param_prior(&prior, &mut rng)[0];
            assert!((-0.1..=1.0).contains(&v));
        }
    }

    #[test]
    fn normal_prior_mean() {
        let prior = ParamPrior::new(vec![ParamMarginal::Normal { mean: 3.0, std: 2.0 }]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_param_prior(&prior, &mut rng)[0]).collect();
        let m = stats::mean(&draws);
        let se = (stats::sample_variance(&draws) / n as f64).sqrt();
        assert!((m - 3.0).abs() <= 4.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn tiny_std_collapses_to_mean() {
        let prior = ParamPrior::new(vec![ParamMarginal::Normal { mean: 0.7, std: 1e-12 }]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_abs_diff_eq!(sample_param_prior(&prior, &mut rng)[0], 0.7, epsilon = 1e-10);
        }
    }

    #[test]
    fn prior_validation() {
        assert!(ParamPrior::new(vec![ParamMarginal::Normal { mean: 0.0, std: 0.0 }]).is_err());
        assert!(ParamPrior::new(vec![ParamMarginal::TruncatedNormal {
            mean: 0.0,
            std: 1.0,
            lo: 1.0,
            hi: 1.0
        }])
        .is_err());
        // mass on [20, 21] of N(0, 1) is ~1e-89
        let err = ParamPrior::new(vec![ParamMarginal::TruncatedNormal {
            mean: 0.0,
            std: 1.0,
            lo: 20.0,
            hi: 21.0,
        }])
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(ParamPrior::new(vec![]).is_err());
    }

    #[test]
    fn point_mass_prior_matches_fixed_filter_bit_for_bit() {
        let problem = pendulum_problem(5, 8);
        let em = ErrorModel::new(GammaMultiplierPrior::new(335.0, 0.003).unwrap());
        let config = FilterConfig::new(300, 21);
        let theta = dv(&[3.0]);
        let fixed = run_filter(&problem, &theta, &em, &config).unwrap();
        let joint = run_joint_filter(
            &problem,
            &em,
            &ParamPrior::point_mass(&theta).unwrap(),
            &config,
            &JointOptions::default(),
        )
        .unwrap();
        assert_eq!(fixed.log_marginal.to_bits(), joint.log_marginal().to_bits());
        assert_eq!(fixed.clouds, joint.smoothed.clouds);
        assert_eq!(fixed.ancestry, joint.smoothed.ancestry);
    }

    #[test]
    fn zero_sigma_baseline_keeps_sigma_zero() {
        let problem = pendulum_problem(6, 6);
        let em = ErrorModel::new(GammaMultiplierPrior::new(10.0, 0.1).unwrap()).ignoring_errors();
        let prior = ParamPrior::new(vec![ParamMarginal::Normal { mean: 3.0, std: 0.5 }]).unwrap();
        let out = run_joint_filter(
            &problem,
            &em,
            &prior,
            &FilterConfig::new(200, 4),
            &JointOptions::default(),
        )
        .unwrap();
        assert!(out
            .smoothed
            .clouds
            .iter()
            .flatten()
            .all(|s| *s == SigmaVector::zeros(2)));
    }

    #[test]
    fn thetas_are_selected_never_mutated_and_caches_consistent() {
        let problem = pendulum_problem(7, 6);
        let em = ErrorModel::new(GammaMultiplierPrior::new(100.0, 0.01).unwrap());
        let prior = ParamPrior::new(vec![ParamMarginal::Normal { mean: 3.0, std: 1.0 }]).unwrap();
        let config = FilterConfig::new(500, 8);
        let out = run_joint_filter(&problem, &em, &prior, &config, &JointOptions::default()).unwrap();
        // initial draws use substream (InitialState, 0, k)
        let streams = crate::rng::Substreams::new(config.seed);
        let initial: Vec<f64> = (0..config.particles)
            .map(|k| sample_param_prior(&prior, &mut streams.rng(crate::rng::Purpose::InitialState, 0, k as u64))[0])
            .collect();
        for p in &out.particles {
            assert!(initial.contains(&p.theta[0]));
        }
        assert!(out.unique_thetas() >= 2);
        for p in out.particles.iter().step_by(50) {
            let fresh = euler_trajectory(&problem.x0, &p.theta, &problem.grid, problem.system.as_ref()).unwrap();
            assert_eq!(&p.state, fresh.last().unwrap());
        }
    }

    #[test]
    fn invalid_draws_get_zero_weight() {
        // half the prior mass sits at L <= 0
        let problem = pendulum_problem(8, 4);
        let em = ErrorModel::new(GammaMultiplierPrior::new(100.0, 0.01).unwrap());
        let prior = ParamPrior::new(vec![ParamMarginal::Normal { mean: 0.0, std: 4.0 }]).unwrap();
        let out = run_joint_filter(
            &problem,
            &em,
            &prior,
            &FilterConfig::new(400, 2),
            &JointOptions::default(),
        )
        .unwrap();
        assert!(out.particles.iter().all(|p| p.alive && p.theta[0] > 0.0));
    }

    #[test]
    fn summary_examples() {
        let names = vec!["L".to_string()];
        let s = posterior_param_summary(&vec![dv(&[2.5]); 7], &names).unwrap();
        assert_eq!(s[0].mean, 2.5);
        assert_eq!(s[0].std, 0.0);
        assert_eq!(s[0].histogram.counts.iter().sum::<usize>(), 7);

        let s = posterior_param_summary(&[dv(&[0.0]), dv(&[2.0])], &names).unwrap();
        assert_eq!(s[0].mean, 1.0);
        assert_eq!(s[0].std, 1.0);
        assert_eq!(s[0].histogram.counts.iter().sum::<usize>(), 2);
        assert!(matches!(posterior_param_summary(&[], &names), Err(Error::EmptyCloud)));
    }

    #[test]
    fn theta_csv_format() {
        let mut buf = Vec::new();
        write_theta_csv(
            &[dv(&[0.5, 1.0]), dv(&[0.25, 2.0])],
            &["a".into(), "b".into()],
            &mut buf,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "param_name,particle_index,value\na,0,0.5\na,1,0.25\nb,0,1\nb,1,2\n"
        );
    }

    #[test]
    fn jitter_rejuvenates_parameter_cloud() {
        assert_eq!(JointOptions::default().jitter, None);
        let problem = pendulum_problem(9, 10);
        let em = ErrorModel::new(GammaMultiplierPrior::new(100.0, 0.01).unwrap());
        let prior = ParamPrior::new(vec![ParamMarginal::Normal { mean: 3.0, std: 1.0 }]).unwrap();
        let config = FilterConfig::new(300, 3);
        let plain = run_joint_filter(&problem, &em, &prior, &config, &JointOptions::default()).unwrap();
        let jittered = run_joint_filter(&problem, &em, &prior, &config, &JointOptions { jitter: Some(0.01) }).unwrap();
        assert!(jittered.unique_thetas() > plain.unique_thetas());
    }
}
