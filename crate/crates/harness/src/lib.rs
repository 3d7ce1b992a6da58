//! Experiment harness: JSON configs in, run directories out.
//!
//! A run directory holds `manifest.json` (everything needed to replay the
//! run plus machine-dependent timing), `report.json` (deterministic results),
//! `series.csv` and experiment-specific CSVs.

pub mod cli;
pub mod config;
pub mod ensemble;
pub mod experiments;
pub mod output;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use valleysim_core::noise::{DERIVATION_RULE, GAUSSIAN_METHOD, RNG_ALGORITHM};
use valleysim_core::oracle::{m2_closed_form, volterra_m2};
use valleysim_core::{Error, Result};

pub use config::{ExperimentConfig, ExperimentKind};
use experiments::{run_experiment, RunStats, ORACLE_CONSISTENCY_TOL};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "VALLEYSIM_THREADS";

/// `VALLEYSIM_THREADS` overrides the flag; `None` means available parallelism.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(flag),
    }
}

fn worker_count(threads: Option<usize>) -> usize {
    threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleRequest {
    pub t_end: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngInfo {
    pub algorithm: String,
    pub gaussian: String,
    pub derivation: String,
}

impl RngInfo {
    fn current() -> Self {
        RngInfo {
            algorithm: RNG_ALGORITHM.into(),
            gaussian: GAUSSIAN_METHOD.into(),
            derivation: DERIVATION_RULE.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Streams {
    pub master_seed: u64,
    pub n_replicas: usize,
    pub rule: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleRequest>,
    pub rng: RngInfo,
    pub streams: Option<Streams>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub dx: Option<f64>,
    /// `dt ≤ dx²`; advisory only.
    pub stability_advisory_ok: Option<bool>,
    #[serde(flatten)]
    pub stats: RunStats,
    pub pass: bool,
}

/// The parts of a manifest that drive a replay.
#[derive(Debug, Deserialize)]
struct ReplaySource {
    subcommand: String,
    #[serde(default)]
    config: Option<ExperimentConfig>,
    #[serde(default)]
    oracle: Option<OracleRequest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub pass: bool,
}

fn prepare(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", out.display())))
}

/// Runs `cfg` into `out`. `subcommand`, when given, must match the config's
/// experiment kind.
pub fn run_config(
    subcommand: Option<&str>,
    cfg: &ExperimentConfig,
    out: &Path,
    threads: Option<usize>,
) -> Result<RunSummary> {
    if let Some(sub) = subcommand {
        if sub != cfg.experiment.subcommand() {
            return Err(Error::Config(format!(
                "subcommand `{sub}` does not match experiment `{}` in the config",
                cfg.experiment.subcommand()
            )));
        }
    }
    cfg.validate()?;
    prepare(out)?;
    let start = Instant::now();
    let outcome = run_experiment(cfg, out, threads)?;
    let elapsed = start.elapsed().as_secs_f64();
    output::write_json(&out.join("report.json"), &outcome.report)?;
    let manifest = Manifest {
        tool: "valleysim",
        version: VERSION,
        subcommand: cfg.experiment.subcommand().into(),
        config: Some(cfg.clone()),
        oracle: None,
        rng: RngInfo::current(),
        streams: Some(Streams {
            master_seed: cfg.master_seed,
            n_replicas: cfg.n_replicas,
            rule: outcome.stream_rule.into(),
        }),
        threads: worker_count(threads),
        wall_clock_seconds: elapsed,
        dx: Some(cfg.grid.dx()),
        stability_advisory_ok: Some(cfg.stepper.within_stability_advisory(cfg.grid.dx())),
        stats: outcome.stats,
        pass: outcome.pass,
    };
    output::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunSummary { pass: outcome.pass })
}

#[derive(Debug, Serialize)]
struct OracleReport {
    t_end: f64,
    n_steps: usize,
    quadrature: &'static str,
    m2_end: f64,
    closed_form: f64,
    max_abs_diff: f64,
    tolerance: f64,
    pass: bool,
}

/// Solves the second-moment integral equation on `[0, t_end]` and writes
/// `oracle.csv` with columns `t,m2`.
pub fn run_oracle(req: OracleRequest, out: &Path) -> Result<RunSummary> {
    prepare(out)?;
    let start = Instant::now();
    let sol = volterra_m2(req.t_end, req.n_steps)?;
    let mut w = output::create(&out.join("oracle.csv"))?;
    sol.write_csv(&mut w)?;
    let max_abs_diff = sol
        .t_grid
        .iter()
        .zip(&sol.m2)
        .fold(0.0f64, |a, (t, m)| a.max((m - m2_closed_form(*t)).abs()));
    let pass = max_abs_diff <= ORACLE_CONSISTENCY_TOL;
    let report = OracleReport {
        t_end: req.t_end,
        n_steps: req.n_steps,
        quadrature: sol.quadrature.descriptor(),
        m2_end: sol.at_end(),
        closed_form: m2_closed_form(req.t_end),
        max_abs_diff,
        tolerance: ORACLE_CONSISTENCY_TOL,
        pass,
    };
    output::write_json(&out.join("report.json"), &report)?;
    output::write_series(&out.join("series.csv"), &[])?;
    let manifest = Manifest {
        tool: "valleysim",
        version: VERSION,
        subcommand: "oracle".into(),
        config: None,
        oracle: Some(req),
        rng: RngInfo::current(),
        streams: None,
        threads: 1,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        dx: None,
        stability_advisory_ok: None,
        stats: RunStats {
            n_steps: req.n_steps,
            ..RunStats::default()
        },
        pass,
    };
    output::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunSummary { pass })
}

/// Re-runs the experiment recorded in `manifest` into `out`.
pub fn replay(manifest: &Path, out: &Path, threads: Option<usize>) -> Result<RunSummary> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let src: ReplaySource =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid manifest: {e}")))?;
    match (src.subcommand.as_str(), src.config, src.oracle) {
        ("oracle", _, Some(req)) => run_oracle(req, out),
        (sub, Some(cfg), _) => run_config(Some(sub), &cfg, out, threads),
        (sub, _, _) => Err(Error::Config(format!("manifest for `{sub}` carries no config"))),
    }
}
