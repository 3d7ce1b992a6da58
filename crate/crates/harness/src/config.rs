//! Experiment configuration: one JSON document, versioned, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use valleysim_core::dynamics::{SigmaSpec, StepperConfig};
use valleysim_core::fractal::LevelRule;
use valleysim_core::lattice::{Grid, InitialCondition};
use valleysim_core::observables::{MomentCheckParams, ValleyParams};
use valleysim_core::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Moments,
    MassDecay,
    ValleyGrowth,
    DecomposeCheck,
    QvCheck,
    ShortTime,
    Dim,
}

impl ExperimentKind {
    pub fn subcommand(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Moments => "moments",
            ExperimentKind::MassDecay => "mass",
            ExperimentKind::ValleyGrowth => "valleys",
            ExperimentKind::DecomposeCheck => "decompose-check",
            ExperimentKind::QvCheck => "qv",
            ExperimentKind::ShortTime => "short-time",
            ExperimentKind::Dim => "dim",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaConfig {
    /// `σ(u) = c·u`.
    Linear { c: f64 },
    /// `σ(u) = α·u + β·sin(u)` with declared bounds.
    SinePerturbed {
        alpha: f64,
        beta: f64,
        l_sigma: f64,
        lip_sigma: f64,
    },
}

impl SigmaConfig {
    pub fn build(&self) -> Result<SigmaSpec> {
        match *self {
            SigmaConfig::Linear { c } => {
                if !c.is_finite() {
                    return Err(Error::Config(format!("sigma.c must be finite, got {c}")));
                }
                Ok(SigmaSpec::linear(c))
            }
            SigmaConfig::SinePerturbed {
                alpha,
                beta,
                l_sigma,
                lip_sigma,
            } => SigmaSpec::sine_perturbed(alpha, beta, l_sigma, lip_sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub t_end: f64,
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

fn default_series_replicas() -> usize {
    8
}

fn default_series_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Replicas (from index 0) whose per-step series go to series.csv.
    #[serde(default = "default_series_replicas")]
    pub series_replicas: usize,
    /// Keep every k-th step in series.csv.
    #[serde(default = "default_series_stride")]
    pub series_stride: usize,
    /// Write replica 0's snapshots under fields/.
    #[serde(default)]
    pub fields: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            series_replicas: default_series_replicas(),
            series_stride: default_series_stride(),
            fields: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    pub orders: Vec<u32>,
    /// Relative tolerance of the oracle comparison; the CI half-width is used
    /// when it is larger.
    #[serde(default = "default_oracle_tolerance")]
    pub oracle_tolerance: f64,
    #[serde(default = "default_oracle_steps")]
    pub oracle_steps: usize,
}

fn default_oracle_tolerance() -> f64 {
    0.05
}

fn default_oracle_steps() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassSection {
    /// Run the per-time z-score test on the snapshot times.
    #[serde(default)]
    pub martingale: bool,
    /// Fit the median mass against `t^{1/3}` on the positive snapshot times
    /// inside `[lo, hi]`; no fit when absent.
    #[serde(default)]
    pub fit_window: Option<[f64; 2]>,
    #[serde(default = "default_min_r2")]
    pub min_r_squared: f64,
}

fn default_min_r2() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValleySection {
    #[serde(default = "default_h0")]
    pub h0: f64,
    #[serde(default = "default_saturation_limit")]
    pub max_saturated_fraction: f64,
}

fn default_h0() -> f64 {
    ValleyParams::default().h0
}

impl ValleySection {
    pub fn params(&self) -> Result<ValleyParams> {
        ValleyParams::new(self.h0)
    }
}

fn default_saturation_limit() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSection {
    /// Number of unit hats on each side; derived from `eta1` when absent.
    #[serde(default)]
    pub m: Option<usize>,
    /// Time index `n`; the run ends at `t = n`.
    pub n: f64,
    /// `L(n) = exp(η₁ n^{1/3})`, `M = 2⌊L(n)⌋`.
    #[serde(default)]
    pub eta1: Option<f64>,
    /// Reports `sup_{|x| ≤ L} u(n,x) · e^{η₂ n^{1/3}}` when set.
    #[serde(default)]
    pub eta2: Option<f64>,
    /// Overrides `L`; defaults to `M/2` when `eta1` is absent.
    #[serde(default)]
    pub l: Option<f64>,
}

impl DecomposeSection {
    /// `(M, L)`.
    pub fn resolve(&self) -> Result<(usize, f64)> {
        if !(self.n > 0.0) {
            return Err(Error::Config(format!("decompose.n must be positive, got {}", self.n)));
        }
        let (m, l) = match (self.m, self.eta1) {
            (Some(m), _) => (m, self.l.unwrap_or(m as f64 / 2.0)),
            (None, Some(eta1)) => {
                if !(eta1 > 0.0) {
                    return Err(Error::Config(format!("decompose.eta1 must be positive, got {eta1}")));
                }
                let l = (eta1 * self.n.cbrt()).exp();
                (2 * l.floor() as usize, self.l.unwrap_or(l))
            }
            (None, None) => return Err(Error::Config("decompose needs `m` or `eta1`".into())),
        };
        if m < 1 {
            return Err(Error::Config("decompose.m must be >= 1".into()));
        }
        if !(l > 0.0) {
            return Err(Error::Config(format!("decompose.l must be positive, got {l}")));
        }
        Ok((m, l))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    Indicator { lo: f64, hi: f64 },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QvSection {
    pub phi: TestFunction,
    #[serde(default = "default_oracle_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortTimeSection {
    pub k: u32,
    pub gamma: f64,
    pub beta: f64,
    pub theta: f64,
    pub n_values: Vec<f64>,
}

impl ShortTimeSection {
    pub fn params(&self) -> Result<MomentCheckParams> {
        MomentCheckParams::new(self.k, self.gamma, self.beta, self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DimSource {
    /// Integers `1..=⌊e^{n_max}⌋`.
    UnitLattice,
    /// `{eⁿ : 0 ≤ n ≤ n_max}`.
    OnePerShell,
    Points { values: Vec<f64> },
    Csv { path: PathBuf },
    /// Space-time peaks of the configured simulation.
    PeakSet { rule: LevelRule, theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimSection {
    pub source: DimSource,
    pub rho_grid: Vec<f64>,
    pub n_max: usize,
    #[serde(default)]
    pub expected: Option<Expected>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub grid: Grid,
    pub stepper: StepperConfig,
    pub sigma: SigmaConfig,
    pub initial: InitialCondition,
    pub schedule: Schedule,
    pub n_replicas: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<MassSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valleys: Option<ValleySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qv: Option<QvSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_time: Option<ShortTimeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<DimSection>,
}

fn section<'a, T>(s: &'a Option<T>, key: &str) -> Result<&'a T> {
    s.as_ref()
        .ok_or_else(|| Error::Config(format!("missing config section `{key}` for this experiment")))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn moments(&self) -> Result<&MomentsSection> {
        section(&self.moments, "moments")
    }

    pub fn mass(&self) -> Result<&MassSection> {
        section(&self.mass, "mass")
    }

    pub fn valleys(&self) -> Result<&ValleySection> {
        section(&self.valleys, "valleys")
    }

    pub fn decompose(&self) -> Result<&DecomposeSection> {
        section(&self.decompose, "decompose")
    }

    pub fn qv(&self) -> Result<&QvSection> {
        section(&self.qv, "qv")
    }

    pub fn short_time(&self) -> Result<&ShortTimeSection> {
        section(&self.short_time, "short_time")
    }

    pub fn dim(&self) -> Result<&DimSection> {
        section(&self.dim, "dim")
    }

    /// Checks every module precondition reachable from this config.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version must be {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        self.stepper.validate()?;
        let sigma = self.sigma.build()?;
        if self.stepper.scheme == valleysim_core::dynamics::Scheme::SplittingExponential
            && sigma.linear_coefficient().is_none()
        {
            return Err(Error::Config(
                "stepper.scheme = splitting_exponential requires sigma.kind = linear".into(),
            ));
        }
        self.initial.validate()?;
        valleysim_core::lattice::sample_initial(&self.initial, &self.grid)?;
        let s = &self.schedule;
        if !(s.t_end > 0.0 && s.t_end.is_finite()) {
            return Err(Error::Config(format!("schedule.t_end must be positive, got {}", s.t_end)));
        }
        let n_steps = valleysim_core::dynamics::step_count(s.t_end, self.stepper.dt)?;
        valleysim_core::dynamics::snap_times(&s.snapshots, self.stepper.dt, n_steps)?;
        if s.snapshots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("schedule.snapshots must be strictly increasing".into()));
        }
        if self.n_replicas == 0 {
            return Err(Error::Config("n_replicas must be >= 1".into()));
        }
        if self.output.series_stride == 0 {
            return Err(Error::Config("output.series_stride must be >= 1".into()));
        }
        match self.experiment {
            ExperimentKind::Simulate => {}
            ExperimentKind::Moments => {
                let m = self.moments()?;
                if m.orders.is_empty() || m.orders.iter().any(|k| *k < 1) {
                    return Err(Error::Config("moments.orders must be a nonempty list of k >= 1".into()));
                }
                if self.n_replicas < 100 {
                    return Err(Error::Config(format!("n_replicas must be >= 100 for moments, got {}", self.n_replicas)));
                }
                if s.snapshots.is_empty() {
                    return Err(Error::Config("schedule.snapshots must list the moment times".into()));
                }
                if m.oracle_steps < 100 {
                    return Err(Error::Config("moments.oracle_steps must be >= 100".into()));
                }
            }
            ExperimentKind::MassDecay => {
                let m = self.mass()?;
                if s.snapshots.is_empty() {
                    return Err(Error::Config("schedule.snapshots must list the mass times".into()));
                }
                if let Some([lo, hi]) = m.fit_window {
                    let n = s.snapshots.iter().filter(|t| **t > 0.0 && **t >= lo && **t <= hi).count();
                    if n < 3 {
                        return Err(Error::Config(format!(
                            "mass.fit_window [{lo}, {hi}] holds {n} snapshot times; need >= 3"
                        )));
                    }
                }
            }
            ExperimentKind::ValleyGrowth => {
                let v = self.valleys()?;
                v.params()?;
                if self.initial != InitialCondition::ConstantOne {
                    return Err(Error::Config("valley growth requires initial.kind = constant_one".into()));
                }
                if s.snapshots.is_empty() {
                    return Err(Error::Config("schedule.snapshots must list the valley times".into()));
                }
            }
            ExperimentKind::DecomposeCheck => {
                let d = self.decompose()?;
                let (m, _) = d.resolve()?;
                if self.grid.half_width() < 2.0 * m as f64 {
                    return Err(Error::Config(format!(
                        "grid.half_width = {} must cover [-2M, 2M] with M = {m}",
                        self.grid.half_width()
                    )));
                }
                if (d.n - s.t_end).abs() > 1e-12 {
                    return Err(Error::Config("decompose.n must equal schedule.t_end".into()));
                }
                if self.initial != InitialCondition::ConstantOne {
                    return Err(Error::Config("decompose-check requires initial.kind = constant_one".into()));
                }
            }
            ExperimentKind::QvCheck => {
                if let TestFunction::Indicator { lo, hi } = self.qv()?.phi {
                    if !(lo < hi) {
                        return Err(Error::Config(format!("qv.phi needs lo < hi, got [{lo}, {hi}]")));
                    }
                }
            }
            ExperimentKind::ShortTime => {
                let st = self.short_time()?;
                st.params()?;
                if st.n_values.is_empty() || st.n_values.iter().any(|n| !(*n >= 1.0)) {
                    return Err(Error::Config("short_time.n_values must be a nonempty list of N >= 1".into()));
                }
            }
            ExperimentKind::Dim => {
                let d = self.dim()?;
                if d.rho_grid.is_empty()
                    || d.rho_grid.iter().any(|r| !(*r > 0.0))
                    || d.rho_grid.windows(2).any(|w| !(w[1] > w[0]))
                {
                    return Err(Error::Config("dim.rho_grid must be positive and strictly increasing".into()));
                }
                if d.n_max == 0 {
                    return Err(Error::Config("dim.n_max must be >= 1".into()));
                }
                if let DimSource::PeakSet { theta, .. } = d.source {
                    if !(theta > 0.0) {
                        return Err(Error::Config("dim.source.theta must be positive".into()));
                    }
                }
            }
        }
        Ok(())
    }
}
