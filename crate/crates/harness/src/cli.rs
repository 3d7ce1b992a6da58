//! Command-line front end. Exit codes: 0 pass, 2 check failure, 1 error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use valleysim_core::Result;

use crate::config::ExperimentConfig;
use crate::{replay, resolve_threads, run_config, run_oracle, OracleRequest, RunSummary};

#[derive(Debug, Parser)]
#[command(name = "valleysim", version, about = "Stochastic heat equation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `n_replicas`.
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Worker threads; `VALLEYSIM_THREADS` takes precedence.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs an ensemble and summarises L¹ and sup norms at the snapshots.
    Simulate(Common),
    /// Estimates E u(t,0)^k and compares with the oracles.
    Moments(Common),
    /// Tracks the h0-valley around the origin.
    Valleys(Common),
    /// Total-mass martingale test and median decay fit.
    Mass(Common),
    /// Checks the partition-of-unity superposition and the tail bound.
    #[command(name = "decompose-check")]
    DecomposeCheck(Common),
    /// Compares the martingale quadratic variation with its bounds.
    Qv(Common),
    /// Short-time peak and mass frequencies against their envelope.
    #[command(name = "short-time")]
    ShortTime(Common),
    /// Macroscopic dimension of a point set or of simulated peaks.
    Dim(Common),
    /// Solves the second-moment integral equation.
    Oracle {
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, default_value_t = 20_000)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-runs the experiment recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn run_common(sub: &str, c: &Common) -> Result<RunSummary> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = c.replicas {
        cfg.n_replicas = r;
    }
    run_config(Some(sub), &cfg, &c.out, resolve_threads(c.threads)?)
}

pub fn execute(cli: &Cli) -> Result<RunSummary> {
    match &cli.command {
        Command::Simulate(c) => run_common("simulate", c),
        Command::Moments(c) => run_common("moments", c),
        Command::Valleys(c) => run_common("valleys", c),
        Command::Mass(c) => run_common("mass", c),
        Command::DecomposeCheck(c) => run_common("decompose-check", c),
        Command::Qv(c) => run_common("qv", c),
        Command::ShortTime(c) => run_common("short-time", c),
        Command::Dim(c) => run_common("dim", c),
        Command::Oracle { t_end, steps, out } => run_oracle(
            OracleRequest {
                t_end: *t_end,
                n_steps: *steps,
            },
            out,
        ),
        Command::Replay {
            manifest,
            out,
            threads,
        } => replay(manifest, out, resolve_threads(*threads)?),
    }
}

/// Parses `args`, runs, and maps the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(RunSummary { pass: true }) => 0,
        Ok(RunSummary { pass: false }) => {
            eprintln!("valleysim: checks failed; see report.json");
            2
        }
        Err(e) => {
            eprintln!("valleysim: {e}");
            1
        }
    }
}
