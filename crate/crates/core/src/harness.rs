//! Experiment configuration and the command implementations behind the CLI.
//!
//! A run is described by one TOML file. Every command writes its outputs to
//! an output directory together with `config.toml` (the effective
//! configuration, overrides applied) and `report.json`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_prior::{rate_check, GammaMultiplierPrior, InitialSigmaPrior, RateCheckSpec};
use crate::joint::{
    posterior_param_summary, run_joint_filter, write_theta_csv, JointOptions, ParamMarginal, ParamPrior,
};
use crate::models::system_by_name;
use crate::observation::{exact_errors, generate_observations, ObservationOperator, ObservationSet};
use crate::ode::{OdeSystem, ParamVector, SolverGrid, REFERENCE_REFINEMENT};
use crate::particle::{
    credible_band, run_filter, summarize_clouds, write_particles_csv, write_smoothed_csv, ErrorModel, FilterConfig,
    FilterOutput, Problem, ResamplingScheme,
};
use crate::rng::{Purpose, Substreams};
use crate::stats::format_sig9;
use crate::tune::{
    arange, search, write_heatmap_csv, write_leaderboard_csv, BetaSpec, GridSpec, RunSpec, SeedPolicy, Target,
    DEFAULT_K_EVAL,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_SEARCH: i32 = 4;

/// Below this many distinct parameter values `infer` warns about degeneracy.
pub const MIN_UNIQUE_THETAS: usize = 10;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::SearchFailure => EXIT_SEARCH,
        Error::Integration { .. } | Error::FilterCollapse { .. } | Error::Model(_) | Error::EmptyCloud => {
            EXIT_NUMERICAL
        }
        _ => EXIT_CONFIG,
    }
}

fn default_particles() -> usize {
    1000
}
fn default_band_draws() -> usize {
    10_000
}
fn default_refinement() -> usize {
    REFERENCE_REFINEMENT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    pub seed: u64,
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// Fixed-lag smoothing window; omitted means full trajectories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag: Option<usize>,
    #[serde(default)]
    pub resampling: ResamplingScheme,
    pub x0: Vec<f64>,
    /// Parameter used to simulate data and, for `quantify`, the fixed value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    pub grid: GridConfig,
    pub observation: ObservationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub param_prior: Vec<ParamMarginal>,
    #[serde(default = "default_band_draws")]
    pub band_draws: usize,
    /// Std of Gaussian jitter on the parameter at each prediction; off by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune: Option<TuneConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_check: Option<RateCheckConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Initial time of the ODE.
    #[serde(default)]
    pub start: f64,
    pub h: f64,
    /// Spacing of the observation times.
    pub interval: f64,
    pub obs_start: f64,
    pub obs_end: f64,
    /// Reference solver step is `h / reference_refinement`.
    #[serde(default = "default_refinement")]
    pub reference_refinement: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub h_diag: Vec<f64>,
    pub gamma_diag: Vec<f64>,
    /// Read observations from this CSV instead of simulating them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub init: InitialSigmaPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Values {
    pub fn expand(&self) -> Result<Vec<f64>> {
        match self {
            Values::List(v) => Ok(v.clone()),
            Values::Range { start, stop, step } => arange(*start, *stop, *step),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaFamily {
    InverseAlpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaValues {
    Family(BetaFamily),
    Values(Values),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneTarget {
    /// Filter `sigma` with `theta` fixed.
    #[default]
    Fixed,
    /// Filter `(sigma, theta)` under `param_prior`.
    Joint,
}

fn default_k_eval() -> usize {
    DEFAULT_K_EVAL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub alphas: Values,
    pub betas: BetaValues,
    #[serde(default = "default_k_eval")]
    pub k_eval: usize,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
    #[serde(default)]
    pub target: TuneTarget,
}

impl TuneConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        let betas = match &self.betas {
            BetaValues::Family(BetaFamily::InverseAlpha) => BetaSpec::InverseAlpha,
            BetaValues::Values(v) => BetaSpec::List(v.expand()?),
        };
        GridSpec::new(self.alphas.expand()?, betas, self.k_eval, self.seed_policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCheckConfig {
    pub step_sizes: Vec<f64>,
    #[serde(default = "one")]
    pub schedule_c: f64,
    pub interval: f64,
    pub n_intervals: usize,
    pub samples: usize,
    #[serde(default)]
    pub init: InitialSigmaPrior,
}

fn one() -> f64 {
    1.0
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub lag: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub dump_particles: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load a config file. A relative observation path is taken relative to
    /// the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(f) = &cfg.observation.file {
            if f.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.observation.file = Some(base.join(f));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(k) = o.particles {
            self.particles = k;
        }
        if o.lag.is_some() {
            self.lag = o.lag;
        }
    }

    pub fn system(&self) -> Result<Arc<dyn OdeSystem>> {
        system_by_name(&self.system).ok_or_else(|| Error::Config(format!("unknown system {:?}", self.system)))
    }

    /// Check dimensions and value ranges.
    pub fn validate(&self) -> Result<()> {
        let sys = self.system()?;
        let dx = sys.dimension();
        if self.x0.len() != dx {
            return Err(Error::Config(format!(
                "x0: expected {dx} values, got {}",
                self.x0.len()
            )));
        }
        if let Some(t) = &self.theta {
            sys.validate_params(&DVector::from_column_slice(t))
                .map_err(|e| Error::Config(format!("theta: {e}")))?;
        }
        if self.particles == 0 {
            return Err(Error::Config("particles must be at least 1".into()));
        }
        if let Some(j) = self.jitter {
            if !(j > 0.0 && j.is_finite()) {
                return Err(Error::Config(format!("jitter must be positive, got {j}")));
            }
        }
        if self.band_draws == 0 {
            return Err(Error::Config("band_draws must be at least 1".into()));
        }
        if self.observation.h_diag.len() != dx {
            return Err(Error::Config(format!("observation.h_diag: expected {dx} values")));
        }
        if self.observation.gamma_diag.len() != dx {
            return Err(Error::Config(format!("observation.gamma_diag: expected {dx} values")));
        }
        self.operator()?;
        self.solver_grid()?;
        if let Some(p) = &self.prior {
            GammaMultiplierPrior::new(p.alpha, p.beta).map_err(|e| Error::Config(format!("prior: {e}")))?;
        }
        if !self.param_prior.is_empty() {
            if self.param_prior.len() != sys.param_dimension() {
                return Err(Error::Config(format!(
                    "param_prior: expected {} components, got {}",
                    sys.param_dimension(),
                    self.param_prior.len()
                )));
            }
            ParamPrior::new(self.param_prior.clone())?;
        }
        if let Some(t) = &self.tune {
            t.grid()?;
        }
        Ok(())
    }

    pub fn operator(&self) -> Result<ObservationOperator> {
        ObservationOperator::diagonal(&self.observation.h_diag, &self.observation.gamma_diag)
            .map_err(|e| Error::Config(format!("observation: {e}")))
    }

    pub fn solver_grid(&self) -> Result<SolverGrid> {
        let g = &self.grid;
        if !(g.interval > 0.0) {
            return Err(Error::Config("grid.interval must be positive".into()));
        }
        if g.obs_start < g.start || g.obs_end < g.obs_start {
            return Err(Error::Config("grid: need start <= obs_start <= obs_end".into()));
        }
        if g.reference_refinement == 0 {
            return Err(Error::Config("grid.reference_refinement must be at least 1".into()));
        }
        let n = ((g.obs_end - g.start) / g.interval).round() as usize;
        SolverGrid::uniform(g.start, g.interval, n.max(1), g.h).map_err(|e| Error::Config(format!("grid: {e}")))
    }

    pub fn observation_times(&self) -> Result<Vec<f64>> {
        let g = &self.grid;
        let grid = self.solver_grid()?;
        let times: Vec<f64> = grid
            .times()
            .iter()
            .copied()
            .filter(|t| *t >= g.obs_start - 1e-9 * g.interval)
            .collect();
        if times.is_empty() {
            return Err(Error::Config("grid: no observation times".into()));
        }
        Ok(times)
    }

    pub fn reference_step(&self) -> f64 {
        self.grid.h / self.grid.reference_refinement as f64
    }

    fn true_theta(&self) -> Result<ParamVector> {
        self.theta
            .as_ref()
            .map(|t| DVector::from_column_slice(t))
            .ok_or_else(|| Error::Config("theta is required for this command".into()))
    }

    fn error_model(&self) -> Result<ErrorModel> {
        let p = self
            .prior
            .as_ref()
            .ok_or_else(|| Error::Config("[prior] section is required".into()))?;
        Ok(ErrorModel {
            prior: GammaMultiplierPrior::new(p.alpha, p.beta)?,
            init: p.init.clone(),
            force_zero: false,
        })
    }

    fn param_prior(&self) -> Result<ParamPrior> {
        if self.param_prior.is_empty() {
            return Err(Error::Config("param_prior is required for this command".into()));
        }
        ParamPrior::new(self.param_prior.clone())
    }

    pub fn joint_options(&self) -> JointOptions {
        JointOptions { jitter: self.jitter }
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            particles: self.particles,
            lag: self.lag,
            resampling: self.resampling,
            seed: self.seed,
        }
    }

    /// Simulated observations from the reference solution, or the file.
    pub fn observations(&self) -> Result<ObservationSet> {
        if let Some(f) = &self.observation.file {
            let file = File::open(f).map_err(|e| Error::Config(format!("{}: {e}", f.display())))?;
            return ObservationSet::read_csv(BufReader::new(file));
        }
        let sys = self.system()?;
        let mut rng = Substreams::new(self.seed).rng(Purpose::Observation, 0, 0);
        generate_observations(
            &DVector::from_column_slice(&self.x0),
            self.grid.start,
            &self.true_theta()?,
            &self.operator()?,
            &self.observation_times()?,
            self.reference_step(),
            sys.as_ref(),
            &mut rng,
        )
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::new(
            self.system()?,
            DVector::from_column_slice(&self.x0),
            self.solver_grid()?,
            self.observations()?,
            self.operator()?,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config: ExperimentConfig,
    pub wall_time_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_marginal: Option<f64>,
    /// Files written to the output directory.
    pub files: Vec<String>,
    pub details: serde_json::Value,
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn finish(
        mut self,
        command: &str,
        cfg: &ExperimentConfig,
        started: Instant,
        log_marginal: Option<f64>,
        details: serde_json::Value,
    ) -> Result<RunReport> {
        let echo = cfg.to_toml()?;
        self.write("config.toml", |w| Ok(w.write_all(echo.as_bytes())?))?;
        let report = RunReport {
            command: command.to_string(),
            config: cfg.clone(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            log_marginal,
            files: self.files.clone(),
            details,
        };
        let path = self.dir.join("report.json");
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(report)
    }
}

fn write_exact_errors<W: Write>(times: &[f64], errors: &[DVector<f64>], mut w: W) -> Result<()> {
    let dim = errors.first().map_or(0, |e| e.len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=dim).map(|i| format!("r{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (t, r) in times.iter().zip(errors) {
        let row: Vec<String> = std::iter::once(format_sig9(*t))
            .chain(r.iter().map(|v| format_sig9(*v)))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Exact errors at the observation times.
fn observed_exact_errors(
    cfg: &ExperimentConfig,
    problem: &Problem,
    theta: &ParamVector,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let all = exact_errors(
        theta,
        &problem.x0,
        &problem.grid,
        cfg.reference_step(),
        problem.system.as_ref(),
    )?;
    let (times, errs) = problem
        .grid
        .times()
        .iter()
        .zip(all)
        .zip(problem.node_observations())
        .filter(|(_, y)| y.is_some())
        .map(|((t, r), _)| (*t, r))
        .unzip();
    Ok((times, errs))
}

/// One 95% predictive band row per observation time and component.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRow {
    pub t: f64,
    pub component: usize,
    pub lower: f64,
    pub upper: f64,
}

pub fn predictive_bands(out: &FilterOutput, draws: usize, seed: u64) -> Result<Vec<BandRow>> {
    let streams = Substreams::new(seed);
    let mut rows = Vec::new();
    for (j, (t, cloud)) in out.times.iter().zip(&out.clouds).enumerate() {
        let dim = cloud.first().map_or(0, |s| s.len());
        for c in 0..dim {
            let mut rng = streams.rng(Purpose::Band, j as u64, c as u64);
            let (lower, upper) = credible_band(cloud, c, 0.95, draws, &mut rng)?;
            rows.push(BandRow {
                t: *t,
                component: c + 1,
                lower,
                upper,
            });
        }
    }
    Ok(rows)
}

fn write_bands<W: Write>(rows: &[BandRow], mut w: W) -> Result<()> {
    writeln!(w, "t,component,lower,upper")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            format_sig9(r.t),
            r.component,
            format_sig9(r.lower),
            format_sig9(r.upper)
        )?;
    }
    Ok(())
}

fn emit_sigma_outputs(
    out: &mut Outputs<'_>,
    cfg: &ExperimentConfig,
    res: &FilterOutput,
    opts: RunOptions,
    suffix: &str,
) -> Result<()> {
    let rows = summarize_clouds(&res.times, &res.clouds);
    out.write(&format!("smoothed{suffix}.csv"), |w| write_smoothed_csv(&rows, w))?;
    let bands = predictive_bands(res, cfg.band_draws, cfg.seed)?;
    out.write(&format!("bands{suffix}.csv"), |w| write_bands(&bands, w))?;
    if opts.dump_particles {
        out.write(&format!("particles{suffix}.csv"), |w| {
            write_particles_csv(&res.times, &res.clouds, w)
        })?;
    }
    Ok(())
}

pub fn cmd_simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport> {
    let started = Instant::now();
    let theta = cfg.true_theta()?;
    let mut out = Outputs::new(dir)?;
    let problem = cfg.problem()?;
    out.write("observations.csv", |w| problem.observations.write_csv(w))?;
    let (times, errs) = observed_exact_errors(cfg, &problem, &theta)?;
    out.write("exact_errors.csv", |w| write_exact_errors(&times, &errs, w))?;
    let details = serde_json::json!({
        "observations": problem.observations.len(),
        "steps_per_interval": problem.grid.steps_per_interval(),
    });
    out.finish("simulate", cfg, started, None, details)
}

pub fn cmd_quantify(cfg: &ExperimentConfig, dir: &Path, opts: RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    let theta = cfg.true_theta()?;
    let em = cfg.error_model()?;
    let problem = cfg.problem()?;
    let res = run_filter(&problem, &theta, &em, &cfg.filter_config())?;
    let mut out = Outputs::new(dir)?;
    emit_sigma_outputs(&mut out, cfg, &res, opts, "")?;
    if cfg.observation.file.is_none() {
        let (times, errs) = observed_exact_errors(cfg, &problem, &theta)?;
        out.write("exact_errors.csv", |w| write_exact_errors(&times, &errs, w))?;
    }
    let details = serde_json::json!({ "alpha": em.prior.shape(), "beta": em.prior.scale() });
    out.finish("quantify", cfg, started, Some(res.log_marginal), details)
}

#[derive(Debug, Clone, Serialize)]
struct InferSummary {
    log_marginal: f64,
    unique_thetas: usize,
    params: Vec<crate::joint::ParamSummary>,
}

pub fn cmd_infer(cfg: &ExperimentConfig, dir: &Path, opts: RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    let em = cfg.error_model()?;
    let prior = cfg.param_prior()?;
    let problem = cfg.problem()?;
    let names = problem.system.param_names();
    let config = cfg.filter_config();
    let jo = cfg.joint_options();
    let full = run_joint_filter(&problem, &em, &prior, &config, &jo)?;
    if full.unique_thetas() < MIN_UNIQUE_THETAS {
        log::warn!(
            "only {} distinct parameter values survive; consider more particles or a shorter lag",
            full.unique_thetas()
        );
    }
    let baseline = run_joint_filter(&problem, &em.ignoring_errors(), &prior, &config, &jo)?;

    let mut out = Outputs::new(dir)?;
    let (full_thetas, base_thetas) = (full.thetas(), baseline.thetas());
    out.write("theta_posterior.csv", |w| write_theta_csv(&full_thetas, &names, w))?;
    out.write("theta_posterior_baseline.csv", |w| {
        write_theta_csv(&base_thetas, &names, w)
    })?;
    emit_sigma_outputs(&mut out, cfg, &full.smoothed, opts, "")?;
    let summary = serde_json::json!({
        "full": InferSummary {
            log_marginal: full.log_marginal(),
            unique_thetas: full.unique_thetas(),
            params: posterior_param_summary(&full_thetas, &names)?,
        },
        "baseline": InferSummary {
            log_marginal: baseline.log_marginal(),
            unique_thetas: baseline.unique_thetas(),
            params: posterior_param_summary(&base_thetas, &names)?,
        },
    });
    out.json("summary.json", &summary)?;
    if let (Some(t), None) = (&cfg.theta, &cfg.observation.file) {
        let (times, errs) = observed_exact_errors(cfg, &problem, &DVector::from_column_slice(t))?;
        out.write("exact_errors.csv", |w| write_exact_errors(&times, &errs, w))?;
    }
    let details = serde_json::json!({ "alpha": em.prior.shape(), "beta": em.prior.scale() });
    out.finish("infer", cfg, started, Some(full.log_marginal()), details)
}

pub fn cmd_tune(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport> {
    let started = Instant::now();
    let tc = cfg
        .tune
        .as_ref()
        .ok_or_else(|| Error::Config("[tune] section is required".into()))?;
    let grid = tc.grid()?;
    let problem = cfg.problem()?;
    let target = match tc.target {
        TuneTarget::Fixed => Target::Fixed(cfg.true_theta()?),
        TuneTarget::Joint => Target::Joint(cfg.param_prior()?, cfg.joint_options()),
    };
    let run = RunSpec {
        problem,
        target,
        init: cfg.prior.as_ref().map(|p| p.init.clone()).unwrap_or_default(),
        force_zero: false,
        lag: Some(0),
        resampling: cfg.resampling,
    };
    let result = search(&grid, &run, cfg.seed)?;
    let mut out = Outputs::new(dir)?;
    out.write("heatmap.csv", |w| write_heatmap_csv(&result.heatmap, w))?;
    out.write("leaderboard.csv", |w| write_leaderboard_csv(&result.leaderboard, w))?;
    let best = serde_json::json!({
        "alpha": result.best.alpha,
        "beta": result.best.beta,
        "loglik": result.best.loglik,
    });
    out.json("best.json", &best)?;
    let failed = result.heatmap.iter().filter(|c| c.loglik == f64::NEG_INFINITY).count();
    let details = serde_json::json!({ "best": best, "cells": result.heatmap.len(), "failed_cells": failed });
    out.finish("tune", cfg, started, Some(result.best.loglik), details)
}

pub fn cmd_rate_check(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport> {
    let started = Instant::now();
    let rc = cfg
        .rate_check
        .as_ref()
        .ok_or_else(|| Error::Config("[rate_check] section is required".into()))?;
    let sys = cfg.system()?;
    let spec = RateCheckSpec {
        system: sys.as_ref(),
        theta: cfg.true_theta()?,
        x0: DVector::from_column_slice(&cfg.x0),
        start: cfg.grid.start,
        interval: rc.interval,
        n_intervals: rc.n_intervals,
        step_sizes: rc.step_sizes.clone(),
        schedule_c: rc.schedule_c,
        init: rc.init.clone(),
        samples: rc.samples,
        seed: cfg.seed,
    };
    let report = rate_check(&spec)?;
    let mut out = Outputs::new(dir)?;
    let slope = report.fitted_slope.map_or("nan".to_string(), format_sig9);
    out.write("rate_check.csv", |w| {
        writeln!(
            w,
            "h,mean_sq_norm,std_error,fitted_slope,expected_slope,degenerate_zero"
        )?;
        for r in &report.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                format_sig9(r.h),
                format_sig9(r.mean_sq_norm),
                format_sig9(r.std_error),
                slope,
                format_sig9(report.expected_slope),
                report.degenerate_zero
            )?;
        }
        Ok(())
    })?;
    let details = serde_json::to_value(&report).map_err(|e| Error::Io(e.to_string()))?;
    out.finish("rate-check", cfg, started, None, details)
}
