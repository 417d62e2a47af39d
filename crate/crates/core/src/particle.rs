//! Particle filter over discretization-error scales.
//!
//! The generic machinery ([`StateSpaceModel`], [`Ensemble`], [`run_ssm`])
//! runs prediction, correction, resampling and trajectory smoothing for any
//! model. [`run_filter`] instantiates it for the error-scale model with a
//! fixed ODE parameter, and `joint` does the same for the augmented state.
//!
//! Every random draw comes from a substream keyed by step and particle
//! index, so results do not depend on how rayon schedules the work.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_prior::{propagate_interval, GammaMultiplierPrior, InitialSigmaPrior, SigmaVector};
use crate::observation::{log_likelihood, ObservationOperator, ObservationSet};
use crate::ode::{integrate_interval, OdeSystem, ParamVector, SolverGrid, StateVector};
use crate::rng::{Purpose, Substreams};
use crate::stats::{self, format_sig9};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingScheme {
    #[default]
    Multinomial,
    Systematic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub particles: usize,
    /// Fixed-lag smoothing window; `None` smooths whole trajectories.
    pub lag: Option<usize>,
    pub resampling: ResamplingScheme,
    pub seed: u64,
}

impl FilterConfig {
    pub fn new(particles: usize, seed: u64) -> Self {
        Self {
            particles,
            lag: None,
            resampling: ResamplingScheme::Multinomial,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Config("particle count must be at least 1".into()));
        }
        Ok(())
    }
}

/// A particle state that exposes the part kept in smoothed histories.
pub trait Particle: Clone + Send + Sync {
    type Record: Clone + Send + Sync;
    fn record(&self) -> Self::Record;
}

impl Particle for SigmaVector {
    type Record = SigmaVector;
    fn record(&self) -> SigmaVector {
        self.clone()
    }
}

impl Particle for f64 {
    type Record = f64;
    fn record(&self) -> f64 {
        *self
    }
}

/// Smoothed particle histories: one raw cloud per processed observation
/// plus index vectors that are re-threaded at every resampling.
#[derive(Debug, Clone)]
pub struct History<R> {
    times: Vec<f64>,
    raw: Vec<Vec<R>>,
    index: Vec<Vec<usize>>,
    ancestry: Vec<Vec<usize>>,
}

impl<R: Clone> History<R> {
    fn new() -> Self {
        Self {
            times: Vec::new(),
            raw: Vec::new(),
            index: Vec::new(),
            ancestry: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Resampling indices applied after each correction.
    pub fn ancestry(&self) -> &[Vec<usize>] {
        &self.ancestry
    }

    /// The record of particle `k` at history entry `j`.
    pub fn get(&self, j: usize, k: usize) -> &R {
        &self.raw[j][self.index[j][k]]
    }

    /// Raw (pre-resampling) cloud at entry `j`.
    pub fn raw(&self, j: usize) -> &[R] {
        &self.raw[j]
    }

    pub fn cloud(&self, j: usize) -> Vec<R> {
        self.index[j].iter().map(|&i| self.raw[j][i].clone()).collect()
    }

    pub fn clouds(&self) -> Vec<Vec<R>> {
        (0..self.len()).map(|j| self.cloud(j)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble<S: Particle> {
    particles: Vec<S>,
    weights: Vec<f64>,
    log_marginal: f64,
    step: usize,
    history: History<S::Record>,
}

impl<S: Particle> Ensemble<S> {
    pub fn new(particles: Vec<S>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Config("ensemble needs at least one particle".into()));
        }
        let k = particles.len();
        Ok(Self {
            particles,
            weights: vec![1.0 / k as f64; k],
            log_marginal: 0.0,
            step: 0,
            history: History::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[S] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Accumulated `log p(y_{0:i})` estimate.
    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    /// Number of corrections performed.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn history(&self) -> &History<S::Record> {
        &self.history
    }

    pub fn into_parts(self) -> (Vec<S>, History<S::Record>, f64) {
        (self.particles, self.history, self.log_marginal)
    }

    /// Replace every particle by `f(k, particle, rng_k)`, in parallel, with
    /// the substream `(Predict, interval, k)`.
    pub fn predict_with<F>(&mut self, streams: &Substreams, interval: usize, f: F) -> Result<()>
    where
        F: Fn(usize, &S, &mut ChaCha8Rng) -> Result<S> + Sync,
    {
        let next: Vec<S> = self
            .particles
            .par_iter()
            .enumerate()
            .map(|(k, s)| {
                let mut rng = streams.rng(Purpose::Predict, interval as u64, k as u64);
                f(k, s, &mut rng)
            })
            .collect::<Result<_>>()?;
        self.particles = next;
        Ok(())
    }

    /// Weight by `exp(log_weights)`, accumulate the marginal-likelihood
    /// increment, resample and re-thread smoothed histories.
    ///
    /// `node` and `time` identify the observation for error reporting and
    /// the history.
    pub fn correct_with_log_weights<R: Rng + ?Sized>(
        &mut self,
        log_weights: &[f64],
        time: f64,
        node: usize,
        config: &FilterConfig,
        rng: &mut R,
    ) -> Result<Correction> {
        if log_weights.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: log_weights.len(),
            });
        }
        let sanitized: Vec<f64> = log_weights
            .iter()
            .map(|w| if w.is_nan() { f64::NEG_INFINITY } else { *w })
            .collect();
        let total = stats::log_sum_exp(&sanitized);
        if total == f64::NEG_INFINITY {
            return Err(Error::FilterCollapse { node, time });
        }
        let normalized: Vec<f64> = sanitized.iter().map(|w| (w - total).exp()).collect();
        let log_increment = total - (self.len() as f64).ln();
        self.log_marginal += log_increment;

        self.history.times.push(time);
        self.history
            .raw
            .push(self.particles.iter().map(Particle::record).collect());
        self.history.index.push((0..self.len()).collect());

        let indices = resample(&normalized, config.resampling, rng);
        smooth_update(self, &indices, config.lag);
        self.step += 1;
        Ok(Correction {
            log_increment,
            normalized_weights: normalized,
            indices,
        })
    }
}

/// Result of one correction step.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    /// `log((1/K) sum_k u_k)` from the unnormalized weights.
    pub log_increment: f64,
    /// Weights before resampling, summing to one.
    pub normalized_weights: Vec<f64>,
    /// Ancestor of every post-resampling particle.
    pub indices: Vec<usize>,
}

/// Draw `K` ancestor indices from normalized weights.
pub fn resample<R: Rng + ?Sized>(weights: &[f64], scheme: ResamplingScheme, rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    let total = acc;
    let last_positive = weights.iter().rposition(|w| *w > 0.0).unwrap_or(n - 1);
    let pick = |u: f64| -> usize {
        let i = cumulative.partition_point(|c| *c <= u * total);
        i.min(last_positive)
    };
    match scheme {
        ResamplingScheme::Multinomial => (0..n).map(|_| pick(rng.gen::<f64>())).collect(),
        ResamplingScheme::Systematic => {
            let u0: f64 = rng.gen::<f64>() / n as f64;
            (0..n).map(|k| pick(u0 + k as f64 / n as f64)).collect()
        }
    }
}

/// Re-index the current particles and the history window by `indices`.
///
/// The newest history entry is always re-indexed; `lag` further entries
/// behind it are re-indexed too (`None` means all of them).
pub fn smooth_update<S: Particle>(ens: &mut Ensemble<S>, indices: &[usize], lag: Option<usize>) {
    ens.particles = indices.iter().map(|&i| ens.particles[i].clone()).collect();
    let k = ens.particles.len();
    ens.weights = vec![1.0 / k as f64; k];
    let n = ens.history.index.len();
    if n > 0 {
        let window = lag.map_or(n, |l| (l + 1).min(n));
        for idx in &mut ens.history.index[n - window..] {
            *idx = indices.iter().map(|&i| idx[i]).collect();
        }
    }
    ens.history.ancestry.push(indices.to_vec());
}

/// A model the generic filter can run.
pub trait StateSpaceModel: Sync {
    type State: Particle;

    /// Draw particle `k` at node 0.
    fn initial(&self, k: usize, rng: &mut ChaCha8Rng) -> Result<Self::State>;

    /// Advance a particle across interval `interval` (node `i` to `i + 1`).
    fn transition(&self, state: &Self::State, interval: usize, rng: &mut ChaCha8Rng) -> Result<Self::State>;

    /// `log p(y | state)` at grid node `node`; `-inf` marks an impossible
    /// particle.
    fn log_density(&self, state: &Self::State, node: usize, y: &DVector<f64>) -> Result<f64>;
}

/// Output of [`run_ssm`].
#[derive(Debug, Clone)]
pub struct SsmRun<S: Particle> {
    pub particles: Vec<S>,
    pub history: History<S::Record>,
    pub log_marginal: f64,
}

/// Run prediction and correction over all grid nodes. `observations[node]`
/// holds the observation made at that node, if any.
pub fn run_ssm<M: StateSpaceModel>(
    model: &M,
    node_times: &[f64],
    observations: &[Option<DVector<f64>>],
    config: &FilterConfig,
) -> Result<SsmRun<M::State>> {
    config.validate()?;
    if node_times.len() != observations.len() {
        return Err(Error::DimensionMismatch {
            expected: node_times.len(),
            found: observations.len(),
        });
    }
    let streams = Substreams::new(config.seed);
    let initial: Vec<M::State> = (0..config.particles)
        .into_par_iter()
        .map(|k| model.initial(k, &mut streams.rng(Purpose::InitialState, 0, k as u64)))
        .collect::<Result<_>>()?;
    let mut ens = Ensemble::new(initial)?;
    for (node, (t, y)) in node_times.iter().zip(observations).enumerate() {
        if node > 0 {
            ens.predict_with(&streams, node - 1, |_, s, rng| model.transition(s, node - 1, rng))?;
        }
        if let Some(y) = y {
            let log_w: Vec<f64> = ens
                .particles
                .par_iter()
                .map(|s| model.log_density(s, node, y))
                .collect::<Result<_>>()?;
            let mut rng = streams.rng(Purpose::Resample, node as u64, 0);
            ens.correct_with_log_weights(&log_w, *t, node, config, &mut rng)?;
        }
    }
    let (particles, history, log_marginal) = ens.into_parts();
    Ok(SsmRun {
        particles,
        history,
        log_marginal,
    })
}

/// An ODE together with its data: initial state, solver grid, observations
/// and observation operator.
#[derive(Clone)]
pub struct Problem {
    pub system: Arc<dyn OdeSystem>,
    pub x0: StateVector,
    pub grid: SolverGrid,
    pub observations: ObservationSet,
    pub operator: ObservationOperator,
    node_obs: Vec<Option<DVector<f64>>>,
}

impl Problem {
    pub fn new(
        system: Arc<dyn OdeSystem>,
        x0: StateVector,
        grid: SolverGrid,
        observations: ObservationSet,
        operator: ObservationOperator,
    ) -> Result<Self> {
        let dx = system.dimension();
        if x0.len() != dx {
            return Err(Error::DimensionMismatch {
                expected: dx,
                found: x0.len(),
            });
        }
        if operator.state_dimension() != dx {
            return Err(Error::DimensionMismatch {
                expected: dx,
                found: operator.state_dimension(),
            });
        }
        if observations.dimension() != operator.obs_dimension() {
            return Err(Error::DimensionMismatch {
                expected: operator.obs_dimension(),
                found: observations.dimension(),
            });
        }
        let node_obs = observations
            .node_map(&grid)?
            .into_iter()
            .map(|o| o.map(|i| observations.values[i].clone()))
            .collect();
        Ok(Self {
            system,
            x0,
            grid,
            observations,
            operator,
            node_obs,
        })
    }

    /// Observation at every grid node, if any.
    pub fn node_observations(&self) -> &[Option<DVector<f64>>] {
        &self.node_obs
    }

    pub fn dimension(&self) -> usize {
        self.system.dimension()
    }
}

/// The Markov prior on `sigma` plus its initial law.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    pub prior: GammaMultiplierPrior,
    pub init: InitialSigmaPrior,
    /// Ignore discretization error: `sigma = 0` at every node.
    pub force_zero: bool,
}

impl ErrorModel {
    pub fn new(prior: GammaMultiplierPrior) -> Self {
        Self {
            prior,
            init: InitialSigmaPrior::Zero,
            force_zero: false,
        }
    }

    /// The same prior with `sigma` pinned to zero.
    pub fn ignoring_errors(&self) -> Self {
        Self {
            force_zero: true,
            init: InitialSigmaPrior::Zero,
            ..self.clone()
        }
    }

    pub(crate) fn initial_sigma(&self, dim: usize, h: f64) -> Result<SigmaVector> {
        if self.force_zero {
            Ok(SigmaVector::zeros(dim))
        } else {
            self.init.sample(dim, h)
        }
    }

    pub(crate) fn advance<R: Rng + ?Sized>(
        &self,
        sigma: &SigmaVector,
        abs_errors: &[SigmaVector],
        rng: &mut R,
    ) -> Result<SigmaVector> {
        if self.force_zero {
            Ok(sigma.clone())
        } else {
            propagate_interval(sigma, abs_errors, &self.prior, rng)
        }
    }
}

/// K draws from the initial prior, uniformly weighted.
pub fn init_ensemble(init: &InitialSigmaPrior, dim: usize, h: f64, particles: usize) -> Result<Ensemble<SigmaVector>> {
    if particles == 0 {
        return Err(Error::Config("particle count must be at least 1".into()));
    }
    let sigma = init.sample(dim, h)?;
    Ensemble::new(vec![sigma; particles])
}

/// Propagate each particle through one observation interval.
pub fn predict(
    ens: &mut Ensemble<SigmaVector>,
    abs_errors: &[SigmaVector],
    prior: &GammaMultiplierPrior,
    streams: &Substreams,
    interval: usize,
) -> Result<()> {
    ens.predict_with(streams, interval, |_, s, rng| {
        propagate_interval(s, abs_errors, prior, rng)
    })
}

/// Weight every particle by the inflated Gaussian density of `y`, then
/// resample and smooth. Returns the log marginal-likelihood increment.
#[allow(clippy::too_many_arguments)]
pub fn correct<R: Rng + ?Sized>(
    ens: &mut Ensemble<SigmaVector>,
    y: &DVector<f64>,
    x_num: &StateVector,
    op: &ObservationOperator,
    time: f64,
    node: usize,
    config: &FilterConfig,
    rng: &mut R,
) -> Result<Correction> {
    let log_w: Vec<f64> = ens
        .particles()
        .par_iter()
        .map(|s| log_likelihood(y, x_num, s, op))
        .collect::<Result<_>>()?;
    ens.correct_with_log_weights(&log_w, time, node, config, rng)
}

struct SigmaModel<'a> {
    problem: &'a Problem,
    error_model: &'a ErrorModel,
    /// Euler state at every node.
    states: Vec<StateVector>,
    /// `|local error|` for every fine step of every interval.
    abs_errors: Vec<Vec<SigmaVector>>,
}

impl<'a> SigmaModel<'a> {
    fn new(problem: &'a Problem, theta: &ParamVector, error_model: &'a ErrorModel) -> Result<Self> {
        problem.system.validate_params(theta)?;
        let grid = &problem.grid;
        let mut states = Vec::with_capacity(grid.times().len());
        let mut abs_errors = Vec::with_capacity(grid.n_intervals());
        states.push(problem.x0.clone());
        for i in 0..grid.n_intervals() {
            let (next, est) = integrate_interval(&states[i], theta, grid, i, problem.system.as_ref())?;
            abs_errors.push(est.into_iter().map(|e| e.componentwise_abs).collect());
            states.push(next);
        }
        Ok(Self {
            problem,
            error_model,
            states,
            abs_errors,
        })
    }
}

impl StateSpaceModel for SigmaModel<'_> {
    type State = SigmaVector;

    fn initial(&self, _k: usize, _rng: &mut ChaCha8Rng) -> Result<SigmaVector> {
        self.error_model
            .initial_sigma(self.problem.dimension(), self.problem.grid.h())
    }

    fn transition(&self, state: &SigmaVector, interval: usize, rng: &mut ChaCha8Rng) -> Result<SigmaVector> {
        self.error_model.advance(state, &self.abs_errors[interval], rng)
    }

    fn log_density(&self, state: &SigmaVector, node: usize, y: &DVector<f64>) -> Result<f64> {
        log_likelihood(y, &self.states[node], state, &self.problem.operator)
    }
}

/// Smoothed `sigma` clouds at the observation times plus the log marginal
/// likelihood estimate.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub times: Vec<f64>,
    /// `clouds[j][k]`: particle `k` of the smoothed cloud at `times[j]`.
    pub clouds: Vec<Vec<SigmaVector>>,
    pub log_marginal: f64,
    /// Resampling indices after each observation.
    pub ancestry: Vec<Vec<usize>>,
}

impl FilterOutput {
    pub(crate) fn from_history(history: &History<SigmaVector>, log_marginal: f64) -> Self {
        Self {
            times: history.times().to_vec(),
            clouds: history.clouds(),
            log_marginal,
            ancestry: history.ancestry().to_vec(),
        }
    }
}

/// Filter and smooth the error scales for a fixed parameter.
pub fn run_filter(
    problem: &Problem,
    theta: &ParamVector,
    error_model: &ErrorModel,
    config: &FilterConfig,
) -> Result<FilterOutput> {
    let model = SigmaModel::new(problem, theta, error_model)?;
    let run = run_ssm(&model, problem.grid.times(), problem.node_observations(), config)?;
    Ok(FilterOutput::from_history(&run.history, run.log_marginal))
}

/// Quantiles of `r ~ N(0, sigma_c^2)` with `sigma` drawn from the cloud.
///
/// `draws` predictive samples are taken; each picks a particle uniformly.
pub fn credible_band<R: Rng + ?Sized>(
    cloud: &[SigmaVector],
    component: usize,
    level: f64,
    draws: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if cloud.is_empty() || draws == 0 {
        return Err(Error::EmptyCloud);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "credible level must lie in (0, 1), got {level}"
        )));
    }
    if component >= cloud[0].len() {
        return Err(Error::DimensionMismatch {
            expected: cloud[0].len(),
            found: component,
        });
    }
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let s = &cloud[rng.gen_range(0..cloud.len())];
            s[component] * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let sorted = stats::sorted(&samples);
    Ok((
        stats::quantile_sorted(&sorted, (1.0 - level) / 2.0),
        stats::quantile_sorted(&sorted, (1.0 + level) / 2.0),
    ))
}

/// One row of the smoothed-output table.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedRow {
    pub t: f64,
    pub component: usize,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    pub mean: f64,
}

pub fn summarize_clouds(times: &[f64], clouds: &[Vec<SigmaVector>]) -> Vec<SmoothedRow> {
    let mut rows = Vec::new();
    for (t, cloud) in times.iter().zip(clouds) {
        let dim = cloud.first().map_or(0, |s| s.len());
        for c in 0..dim {
            let values: Vec<f64> = cloud.iter().map(|s| s[c]).collect();
            let sorted = stats::sorted(&values);
            rows.push(SmoothedRow {
                t: *t,
                component: c + 1,
                q025: stats::quantile_sorted(&sorted, 0.025),
                q500: stats::quantile_sorted(&sorted, 0.5),
                q975: stats::quantile_sorted(&sorted, 0.975),
                mean: stats::mean(&values),
            });
        }
    }
    rows
}

pub fn write_smoothed_csv<W: Write>(rows: &[SmoothedRow], mut w: W) -> Result<()> {
    writeln!(w, "t,component,q025,q500,q975,mean")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            format_sig9(r.t),
            r.component,
            format_sig9(r.q025),
            format_sig9(r.q500),
            format_sig9(r.q975),
            format_sig9(r.mean)
        )?;
    }
    Ok(())
}

pub fn write_particles_csv<W: Write>(times: &[f64], clouds: &[Vec<SigmaVector>], mut w: W) -> Result<()> {
    writeln!(w, "t,component,particle_index,sigma")?;
    for (t, cloud) in times.iter().zip(clouds) {
        let dim = cloud.first().map_or(0, |s| s.len());
        for c in 0..dim {
            for (k, s) in cloud.iter().enumerate() {
                writeln!(w, "{},{},{},{}", format_sig9(*t), c + 1, k, format_sig9(s[c]))?;
            }
        }
    }
    Ok(())
}
