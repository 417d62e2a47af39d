//! Empirical-Bayes grid search over the Gamma prior hyperparameters
//! `(alpha, beta)`.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_prior::{GammaMultiplierPrior, InitialSigmaPrior};
use crate::joint::{run_joint_filter, JointOptions, ParamPrior};
use crate::ode::ParamVector;
use crate::particle::{run_filter, ErrorModel, FilterConfig, Problem, ResamplingScheme};
use crate::rng::{Purpose, Substreams};
use crate::stats::{format_sig9, parse_float};

pub const DEFAULT_K_EVAL: usize = 50;
pub const LEADERBOARD_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSpec {
    List(Vec<f64>),
    /// `beta = 1 / alpha` for every alpha.
    InverseAlpha,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every cell uses the search seed.
    #[default]
    Shared,
    /// Each cell gets its own child seed.
    PerCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub alphas: Vec<f64>,
    pub betas: BetaSpec,
    pub k_eval: usize,
    pub seed_policy: SeedPolicy,
}

impl GridSpec {
    pub fn new(alphas: Vec<f64>, betas: BetaSpec, k_eval: usize, seed_policy: SeedPolicy) -> Result<Self> {
        let g = Self {
            alphas,
            betas,
            k_eval,
            seed_policy,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::Config("alpha list is empty".into()));
        }
        if let BetaSpec::List(b) = &self.betas {
            if b.is_empty() {
                return Err(Error::Config("beta list is empty".into()));
            }
            if let Some(v) = b.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("beta must be positive, got {v}")));
            }
        }
        if let Some(v) = self.alphas.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("alpha must be positive, got {v}")));
        }
        if self.k_eval == 0 {
            return Err(Error::Config("k_eval must be at least 1".into()));
        }
        Ok(())
    }

    /// Candidate pairs, alpha-major.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        match &self.betas {
            BetaSpec::List(bs) => self
                .alphas
                .iter()
                .flat_map(|&a| bs.iter().map(move |&b| (a, b)))
                .collect(),
            BetaSpec::InverseAlpha => self.alphas.iter().map(|&a| (a, 1.0 / a)).collect(),
        }
    }
}

/// `start, start + step, ..., stop` with `stop` included up to rounding.
pub fn arange(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || stop < start {
        return Err(Error::Config(format!("bad range {start}..{stop} step {step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub alpha: f64,
    pub beta: f64,
    /// `-inf` when the filter collapsed or the integration failed.
    pub loglik: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// What is filtered when a cell is evaluated.
#[derive(Clone)]
pub enum Target {
    Fixed(ParamVector),
    Joint(ParamPrior, JointOptions),
}

#[derive(Clone)]
pub struct RunSpec {
    pub problem: Problem,
    pub target: Target,
    pub init: InitialSigmaPrior,
    pub force_zero: bool,
    pub lag: Option<usize>,
    pub resampling: ResamplingScheme,
}

impl RunSpec {
    pub fn fixed(problem: Problem, theta: ParamVector) -> Self {
        Self {
            problem,
            target: Target::Fixed(theta),
            init: InitialSigmaPrior::Zero,
            force_zero: false,
            lag: Some(0),
            resampling: ResamplingScheme::default(),
        }
    }
}

/// Log marginal likelihood under `(alpha, beta)`. Collapse and integration
/// failures are recorded as `-inf`.
pub fn evaluate_cell(alpha: f64, beta: f64, run: &RunSpec, k_eval: usize, seed: u64) -> Result<HeatmapCell> {
    let prior = GammaMultiplierPrior::new(alpha, beta)?;
    let error_model = ErrorModel {
        prior,
        init: run.init.clone(),
        force_zero: run.force_zero,
    };
    let config = FilterConfig {
        particles: k_eval,
        lag: run.lag,
        resampling: run.resampling,
        seed,
    };
    let result = match &run.target {
        Target::Fixed(theta) => run_filter(&run.problem, theta, &error_model, &config).map(|o| o.log_marginal),
        Target::Joint(pp, opts) => {
            run_joint_filter(&run.problem, &error_model, pp, &config, opts).map(|o| o.log_marginal())
        }
    };
    let (loglik, reason) = match result {
        Ok(v) if v.is_nan() => (f64::NEG_INFINITY, Some("log-likelihood is NaN".to_string())),
        Ok(v) => (v, None),
        Err(e) if e.is_numerical() => {
            log::debug!("cell ({alpha}, {beta}) failed: {e}");
            (f64::NEG_INFINITY, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    Ok(HeatmapCell {
        alpha,
        beta,
        loglik,
        seed,
        reason,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: HeatmapCell,
    /// Top cells by log-likelihood.
    pub leaderboard: Vec<HeatmapCell>,
    /// Every cell in grid order.
    pub heatmap: Vec<HeatmapCell>,
}

/// Higher log-likelihood first; ties go to smaller alpha, then smaller beta.
pub fn rank_order(a: &HeatmapCell, b: &HeatmapCell) -> Ordering {
    b.loglik
        .total_cmp(&a.loglik)
        .then(a.alpha.total_cmp(&b.alpha))
        .then(a.beta.total_cmp(&b.beta))
}

pub fn search(grid: &GridSpec, run: &RunSpec, seed: u64) -> Result<SearchResult> {
    grid.validate()?;
    let streams = Substreams::new(seed);
    let cells = grid.cells();
    let heatmap: Vec<HeatmapCell> = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let s = match grid.seed_policy {
                SeedPolicy::Shared => seed,
                SeedPolicy::PerCell => streams.child_seed(Purpose::Cell, i as u64),
            };
            evaluate_cell(a, b, run, grid.k_eval, s)
        })
        .collect::<Result<_>>()?;
    let mut ranked = heatmap.clone();
    ranked.sort_by(rank_order);
    if ranked[0].loglik == f64::NEG_INFINITY {
        return Err(Error::SearchFailure);
    }
    ranked.truncate(LEADERBOARD_SIZE);
    Ok(SearchResult {
        best: ranked[0].clone(),
        leaderboard: ranked,
        heatmap,
    })
}

pub fn write_heatmap_csv<W: Write>(cells: &[HeatmapCell], mut w: W) -> Result<()> {
    writeln!(w, "alpha,beta,loglik")?;
    for c in cells {
        writeln!(
            w,
            "{},{},{}",
            format_sig9(c.alpha),
            format_sig9(c.beta),
            format_sig9(c.loglik)
        )?;
    }
    Ok(())
}

/// Parse `alpha,beta,loglik` rows.
pub fn read_heatmap_csv<R: BufRead>(r: R) -> Result<Vec<(f64, f64, f64)>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "alpha,beta,loglik" {
        return Err(Error::Parse("expected header alpha,beta,loglik".into()));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("expected 3 fields: {line:?}")));
        }
        out.push((parse_float(f[0])?, parse_float(f[1])?, parse_float(f[2])?));
    }
    Ok(out)
}

pub fn write_leaderboard_csv<W: Write>(cells: &[HeatmapCell], mut w: W) -> Result<()> {
    writeln!(w, "rank,alpha,beta,alpha_times_beta,loglik")?;
    for (i, c) in cells.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{}",
            i + 1,
            format_sig9(c.alpha),
            format_sig9(c.beta),
            format_sig9(c.alpha * c.beta),
            format_sig9(c.loglik)
        )?;
    }
    Ok(())
}
