use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use expmc::experiment::{self, ExperimentConfig, Setup};
use expmc::io;
use expmc::metrics::RiskReport;

#[derive(Parser)]
#[command(name = "expmc", version, about = "Low-rank matrix completion experiments under exponential-family noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth matrix and the sampling table.
    Gen(Common),
    /// Generate a ground truth and simulate observations at the first grid size.
    Simulate(Common),
    /// Fit the configured estimator on given or simulated observations.
    Fit(Common),
    /// Risk versus sample size over the configured grid.
    RateSweep(Common),
    /// Evaluate the oracle inequalities of the known-sampling estimator.
    OracleCheck(Common),
    /// Monte Carlo check of the score concentration.
    Concentration(Common),
    /// Build and verify the lower-bound packing and fit its members.
    LowerBound(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::RateSweep(_) => "rate-sweep",
            Command::OracleCheck(_) => "oracle-check",
            Command::Concentration(_) => "concentration",
            Command::LowerBound(_) => "lower-bound",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Gen(c)
            | Command::Simulate(c)
            | Command::Fit(c)
            | Command::RateSweep(c)
            | Command::OracleCheck(c)
            | Command::Concentration(c)
            | Command::LowerBound(c) => c,
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    version: &'static str,
    config: &'a ExperimentConfig,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text).context("parsing config")?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    // Input paths are relative to the config file.
    let base = common.config.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.observations, &mut cfg.truth].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct FitSummary {
    lambda: f64,
    iterations: usize,
    converged: bool,
    final_objective: f64,
    prox_residual: f64,
    step_size: f64,
    prox_warning: bool,
    risk: Option<RiskReport>,
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    objective: f64,
}

#[derive(Serialize)]
struct OracleSummary {
    config_hash: String,
    runs: usize,
    passed: usize,
    worst_margin: f64,
}

fn run(cmd: &Command) -> Result<()> {
    let common = cmd.common();
    let cfg = load_config(common)?;
    let out = &common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    io::save_json(
        out.join("manifest.json"),
        &Manifest {
            command: cmd.name(),
            seed: cfg.seed,
            config_hash: cfg.hash()?,
            version: env!("CARGO_PKG_VERSION"),
            config: &cfg,
        },
    )?;

    match cmd {
        Command::Gen(_) => {
            let setup = Setup::new(cfg)?;
            io::save_matrix(out.join("truth.csv"), &setup.truth(0)?.x_bar)?;
            io::save_matrix(out.join("sampling.csv"), setup.scheme.table())?;
        }
        Command::Simulate(_) => {
            let setup = Setup::new(cfg)?;
            let truth = setup.truth(0)?;
            let obs = setup.simulate(&truth.x_bar, 0, 0)?;
            io::save_matrix(out.join("truth.csv"), &truth.x_bar)?;
            io::save_matrix(out.join("sampling.csv"), setup.scheme.table())?;
            io::save_observations(out.join("observations.csv"), &obs)?;
        }
        Command::Fit(_) => {
            let setup = Setup::new(cfg)?;
            let c = &setup.cfg;
            let truth = match &c.truth {
                Some(p) => Some(io::load_matrix(p)?),
                None if c.observations.is_none() => Some(setup.truth(0)?.x_bar),
                None => None,
            };
            let obs = match &c.observations {
                Some(p) => io::load_observations(p, c.m1, c.m2)?,
                None => setup.simulate(truth.as_ref().expect("generated above"), 0, 0)?,
            };
            let (p, res) = setup.fit(obs, truth.as_ref())?;
            let risk = truth
                .as_ref()
                .map(|t| RiskReport::compute(&c.noise, &setup.scheme, p.obs(), &res.x_hat, t))
                .transpose()?;
            io::save_matrix(out.join("x_hat.csv"), &res.x_hat)?;
            let trace: Vec<TraceRow> = res
                .objective_trace
                .iter()
                .enumerate()
                .map(|(iteration, &objective)| TraceRow { iteration, objective })
                .collect();
            io::save_rows(out.join("trace.csv"), &trace)?;
            io::save_json(
                out.join("fit.json"),
                &FitSummary {
                    lambda: res.lambda_used,
                    iterations: res.iterations,
                    converged: res.converged,
                    final_objective: res.final_objective(),
                    prox_residual: res.prox_residual,
                    step_size: res.step_size,
                    prox_warning: res.prox_warning,
                    risk,
                },
            )?;
        }
        Command::RateSweep(_) => {
            let sweep = experiment::rate_sweep(&cfg)?;
            io::save_rows(out.join("rate_sweep.csv"), &sweep.rows)?;
            io::save_json(out.join("rate_sweep_summary.json"), &sweep)?;
            println!("slope {:.4}", sweep.slope);
        }
        Command::OracleCheck(_) => {
            let oc = experiment::oracle_check(&cfg)?;
            io::save_rows(out.join("oracle_check.csv"), &oc.rows)?;
            let summary = OracleSummary {
                config_hash: oc.config_hash.clone(),
                runs: oc.runs.len(),
                passed: oc.runs.iter().filter(|r| r.report.passes()).count(),
                worst_margin: oc.runs.iter().map(|r| r.report.worst_margin()).fold(f64::INFINITY, f64::min),
            };
            io::save_json(out.join("oracle_check_summary.json"), &summary)?;
            println!("{}/{} runs pass", summary.passed, summary.runs);
        }
        Command::Concentration(_) => {
            let rows = experiment::concentration_check(&cfg)?;
            io::save_rows(out.join("concentration.csv"), &rows)?;
        }
        Command::LowerBound(_) => {
            let run = experiment::lowerbound_run(&cfg)?;
            io::save_rows(out.join("lower_bound.csv"), &run.rows)?;
            if let Some(p) = run.packings.first() {
                p.save(out.join("packing"))?;
            }
            let failed: Vec<_> = run.reports.iter().flat_map(|r| r.failures.iter()).collect();
            for f in &failed {
                eprintln!("packing condition failed: {f}");
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    run(&cli.command)
}
