//! Time stepping for `∂ₜu = ½Δu + σ(u)ξ` and for the linear equation driven
//! by the σ(u)/u-modulated noise, plus the heat semigroup and the
//! partition-of-unity decomposition of constant initial data.

mod partition;
mod semigroup;
mod simulate;
mod stepper;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use partition::{decompose_unity, UnityPartition};
pub use semigroup::{apply_semigroup, heat_kernel, lattice_heat_weights};
pub use simulate::{
    mild_decompose, simulate, simulate_coupled, simulate_from_field, snap_times, step_count, superposition_residual,
    CoupledTrajectory, SeriesRow, Simulator, StepContext, Trajectory,
};
pub use stepper::{step, step_tilde, Stepper};

type SigmaFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum SigmaKind {
    /// `σ(u) = c·u`.
    Linear { c: f64 },
    Custom { name: String, f: SigmaFn },
}

/// The multiplicative coefficient σ together with its declared bounds
/// `L_σ|a| ≤ |σ(a)| ≤ Lip_σ|a|`.
#[derive(Clone)]
pub struct SigmaSpec {
    kind: SigmaKind,
    l_sigma: f64,
    lip_sigma: f64,
}

impl fmt::Debug for SigmaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            SigmaKind::Linear { c } => format!("linear(c = {c})"),
            SigmaKind::Custom { name, .. } => format!("custom({name})"),
        };
        f.debug_struct("SigmaSpec")
            .field("kind", &kind)
            .field("l_sigma", &self.l_sigma)
            .field("lip_sigma", &self.lip_sigma)
            .finish()
    }
}

fn sigma_test_points() -> Vec<f64> {
    let mut pts: Vec<f64> = (-12..=12)
        .map(|k| 10f64.powf(k as f64 / 4.0))
        .chain((1..=40).map(|k| k as f64 * 0.25))
        .collect();
    let neg: Vec<f64> = pts.iter().map(|a| -a).collect();
    pts.extend(neg);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

impl SigmaSpec {
    /// `σ(u) = c·u` with `L_σ = Lip_σ = |c|`. `c = 0` gives the deterministic heat flow.
    pub fn linear(c: f64) -> Self {
        SigmaSpec {
            kind: SigmaKind::Linear { c },
            l_sigma: c.abs(),
            lip_sigma: c.abs(),
        }
    }

    pub fn zero() -> Self {
        Self::linear(0.0)
    }

    /// A user-supplied σ with declared bounds, checked on a fixed test set.
    pub fn custom<F>(name: &str, f: F, l_sigma: f64, lip_sigma: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(l_sigma > 0.0 && l_sigma <= lip_sigma && lip_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma bounds must satisfy 0 < l_sigma <= lip_sigma < inf, got {l_sigma}, {lip_sigma}"
            )));
        }
        if f(0.0) != 0.0 {
            return Err(Error::Config(format!("sigma '{name}' must vanish at 0")));
        }
        let pts = sigma_test_points();
        let tol = 1e-12;
        for &a in &pts {
            let s = f(a);
            if !s.is_finite() {
                return Err(Error::Config(format!("sigma '{name}' is not finite at {a}")));
            }
            if s.abs() < l_sigma * a.abs() * (1.0 - tol) || s.abs() > lip_sigma * a.abs() * (1.0 + tol) {
                return Err(Error::Config(format!(
                    "sigma '{name}' violates l_sigma|a| <= |sigma(a)| <= lip_sigma|a| at a = {a}"
                )));
            }
        }
        for w in pts.windows(2) {
            let slope = (f(w[1]) - f(w[0])) / (w[1] - w[0]);
            if slope.abs() > lip_sigma * (1.0 + 1e-9) {
                return Err(Error::Config(format!(
                    "sigma '{name}' has difference quotient {slope} above lip_sigma on [{}, {}]",
                    w[0], w[1]
                )));
            }
        }
        Ok(SigmaSpec {
            kind: SigmaKind::Custom {
                name: name.to_string(),
                f: Arc::new(f),
            },
            l_sigma,
            lip_sigma,
        })
    }

    /// `σ(a) = α·a + β·sin(a)`; with `α > |β|` this satisfies the two-sided bound
    /// with `L_σ ≥ α - 0.2173|β|` and `Lip_σ = α + |β|`.
    pub fn sine_perturbed(alpha: f64, beta: f64, l_sigma: f64, lip_sigma: f64) -> Result<Self> {
        Self::custom(
            &format!("sine_perturbed(alpha = {alpha}, beta = {beta})"),
            move |a| alpha * a + beta * a.sin(),
            l_sigma,
            lip_sigma,
        )
    }

    pub fn kind(&self) -> &SigmaKind {
        &self.kind
    }

    pub fn l_sigma(&self) -> f64 {
        self.l_sigma
    }

    pub fn lip_sigma(&self) -> f64 {
        self.lip_sigma
    }

    pub fn linear_coefficient(&self) -> Option<f64> {
        match self.kind {
            SigmaKind::Linear { c } => Some(c),
            SigmaKind::Custom { .. } => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.linear_coefficient() == Some(0.0)
    }

    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        match &self.kind {
            SigmaKind::Linear { c } => c * a,
            SigmaKind::Custom { f, .. } => f(a),
        }
    }

    /// σ̃ = σ(u)/u. Linear σ returns `c` exactly; otherwise `|u| < floor` is
    /// evaluated at `sign(u)·floor` and `u = 0` maps to `Lip_σ`.
    #[inline]
    pub fn ratio(&self, u: f64, floor: f64) -> f64 {
        match &self.kind {
            SigmaKind::Linear { c } => *c,
            SigmaKind::Custom { f, .. } => {
                if u == 0.0 {
                    self.lip_sigma
                } else if u.abs() < floor {
                    let a = floor.copysign(u);
                    f(a) / a
                } else {
                    f(u) / u
                }
            }
        }
    }

    pub fn description(&self) -> String {
        match &self.kind {
            SigmaKind::Linear { c } => format!("linear(c = {c})"),
            SigmaKind::Custom { name, .. } => name.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Backward-Euler diffusion with explicit noise.
    SemiImplicit,
    /// Multiplicative exponential noise factor followed by the exact lattice
    /// heat flow; linear σ only.
    SplittingExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativityPolicy {
    ClipToZero,
    Allow,
}

fn default_ratio_floor() -> f64 {
    1e-30
}

fn default_negativity() -> NegativityPolicy {
    NegativityPolicy::ClipToZero
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperConfig {
    pub scheme: Scheme,
    pub dt: f64,
    #[serde(default = "default_negativity")]
    pub negativity_policy: NegativityPolicy,
    #[serde(default = "default_ratio_floor")]
    pub ratio_floor: f64,
}

impl StepperConfig {
    pub fn new(scheme: Scheme, dt: f64) -> Self {
        StepperConfig {
            scheme,
            dt,
            negativity_policy: NegativityPolicy::ClipToZero,
            ratio_floor: default_ratio_floor(),
        }
    }

    pub fn with_policy(mut self, policy: NegativityPolicy) -> Self {
        self.negativity_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("stepper.dt must be positive, got {}", self.dt)));
        }
        if !(self.ratio_floor > 0.0 && self.ratio_floor < 1.0) {
            return Err(Error::Config(format!(
                "stepper.ratio_floor must lie in (0, 1), got {}",
                self.ratio_floor
            )));
        }
        Ok(())
    }

    /// Whether `dt ≤ dx²`; recorded in manifests, never enforced.
    pub fn within_stability_advisory(&self, dx: f64) -> bool {
        self.dt <= dx * dx
    }
}
