use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use errvar::harness::{
    cmd_infer, cmd_quantify, cmd_rate_check, cmd_simulate, cmd_tune, exit_code, ExperimentConfig, Overrides, RunOptions,
};
use errvar::{Error, Result};

/// Bayesian inference of ODE parameters with discretization-error variances.
#[derive(Parser)]
#[command(name = "errvar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate observations and exact discretization errors.
    Simulate(Common),
    /// Filter the error variances with the parameter fixed.
    Quantify(Common),
    /// Joint parameter and error-variance inference, plus the sigma = 0 baseline.
    Infer(Common),
    /// Empirical-Bayes grid search over (alpha, beta).
    Tune(Common),
    /// Step-size convergence check of the error prior.
    RateCheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    lag: Option<usize>,
    /// Also write every smoothed particle.
    #[arg(long)]
    dump_particles: bool,
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Quantify(c) => ("quantify", c),
        Command::Infer(c) => ("infer", c),
        Command::Tune(c) => ("tune", c),
        Command::RateCheck(c) => ("rate-check", c),
    };
    let mut cfg = ExperimentConfig::load(&common.config)?;
    cfg.apply(&Overrides {
        seed: common.seed,
        particles: common.particles,
        lag: common.lag,
    });
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    let opts = RunOptions {
        dump_particles: common.dump_particles,
    };
    let out = &common.out;
    log::info!("{name}: config {}, output {}", common.config.display(), out.display());
    let report = pool.install(|| match &cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg, out),
        Command::Quantify(_) => cmd_quantify(&cfg, out, opts),
        Command::Infer(_) => cmd_infer(&cfg, out, opts),
        Command::Tune(_) => cmd_tune(&cfg, out),
        Command::RateCheck(_) => cmd_rate_check(&cfg, out),
    })?;
    if let Some(best) = report.details.get("best") {
        println!(
            "best: alpha={} beta={} loglik={}",
            best["alpha"], best["beta"], best["loglik"]
        );
    }
    if let Some(l) = report.log_marginal {
        println!("log marginal likelihood: {l}");
    }
    println!(
        "wrote {} files to {} in {:.2}s",
        report.files.len() + 1,
        out.display(),
        report.wall_time_seconds
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
