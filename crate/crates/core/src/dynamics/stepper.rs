use crate::lattice::{Boundary, Field, Grid};
use crate::noise::NoiseSlice;
use crate::{Error, Result};

use super::semigroup::{lattice_heat_weights, SpectralPlan};
use super::{NegativityPolicy, Scheme, SigmaKind, SigmaSpec, StepperConfig};

/// Widest lattice kernel applied by direct convolution; wider kernels go
/// through the FFT.
const MAX_DIRECT_HALF_WIDTH: usize = 64;

/// Constant-coefficient tridiagonal solve for `(I - (dt/2)Δ_h) x = b`.
/// Periodic grids use the Sherman–Morrison correction for the corner entries;
/// Dirichlet grids solve on the interior sites `1..n`.
struct TridiagSolver {
    boundary: Boundary,
    off: f64,
    gamma: f64,
    cprime: Vec<f64>,
    inv_m: Vec<f64>,
    z: Vec<f64>,
    sm_denominator: f64,
}

impl TridiagSolver {
    fn new(grid: &Grid, dt: f64) -> Self {
        let n = grid.n_points();
        let dx = grid.dx();
        let r = dt / (2.0 * dx * dx);
        let diag = 1.0 + 2.0 * r;
        let off = -r;
        match grid.boundary() {
            Boundary::Periodic => {
                let gamma = -diag;
                let mut b = vec![diag; n];
                b[0] = diag - gamma;
                b[n - 1] = diag - off * off / gamma;
                let (cprime, inv_m) = thomas_factors(&b, off);
                let mut u = vec![0.0; n];
                u[0] = gamma;
                u[n - 1] = off;
                let mut z = vec![0.0; n];
                thomas_solve(&cprime, &inv_m, off, &u, &mut z);
                let sm_denominator = 1.0 + z[0] + off * z[n - 1] / gamma;
                TridiagSolver {
                    boundary: Boundary::Periodic,
                    off,
                    gamma,
                    cprime,
                    inv_m,
                    z,
                    sm_denominator,
                }
            }
            Boundary::DirichletZero => {
                let b = vec![diag; n - 1];
                let (cprime, inv_m) = thomas_factors(&b, off);
                TridiagSolver {
                    boundary: Boundary::DirichletZero,
                    off,
                    gamma: 0.0,
                    cprime,
                    inv_m,
                    z: Vec::new(),
                    sm_denominator: 1.0,
                }
            }
        }
    }

    fn solve(&self, rhs: &[f64], out: &mut [f64]) {
        match self.boundary {
            Boundary::Periodic => {
                let n = rhs.len();
                thomas_solve(&self.cprime, &self.inv_m, self.off, rhs, out);
                let fact = (out[0] + self.off * out[n - 1] / self.gamma) / self.sm_denominator;
                for (o, z) in out.iter_mut().zip(&self.z) {
                    *o -= fact * z;
                }
            }
            Boundary::DirichletZero => {
                thomas_solve(&self.cprime, &self.inv_m, self.off, &rhs[1..], &mut out[1..]);
                out[0] = 0.0;
            }
        }
    }
}

fn thomas_factors(diag: &[f64], off: f64) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut cprime = vec![0.0; n];
    let mut inv_m = vec![0.0; n];
    inv_m[0] = 1.0 / diag[0];
    cprime[0] = off * inv_m[0];
    for i in 1..n {
        inv_m[i] = 1.0 / (diag[i] - off * cprime[i - 1]);
        cprime[i] = off * inv_m[i];
    }
    (cprime, inv_m)
}

fn thomas_solve(cprime: &[f64], inv_m: &[f64], off: f64, rhs: &[f64], out: &mut [f64]) {
    let n = rhs.len();
    out[0] = rhs[0] * inv_m[0];
    for i in 1..n {
        out[i] = (rhs[i] - off * out[i - 1]) * inv_m[i];
    }
    for i in (0..n - 1).rev() {
        out[i] -= cprime[i] * out[i + 1];
    }
}

enum Diffusion {
    BackwardEuler(TridiagSolver),
    Kernel(Vec<f64>),
    Spectral(SpectralPlan),
}

/// Reusable stepping machinery for one grid and one [`StepperConfig`].
///
/// `advance` moves `u` one slab forward under σ; `advance_tilde` moves a
/// solution of the linear equation with site-wise coefficient `ratio`. For
/// linear σ and `ratio ≡ c` the two perform the same floating-point operations.
pub struct Stepper {
    grid: Grid,
    cfg: StepperConfig,
    diffusion: Diffusion,
    noise_factor: Vec<f64>,
    work: Vec<f64>,
    ext: Vec<f64>,
}

impl Stepper {
    pub fn new(grid: &Grid, cfg: &StepperConfig) -> Result<Self> {
        cfg.validate()?;
        let n = grid.n_points();
        let diffusion = match cfg.scheme {
            Scheme::SemiImplicit => Diffusion::BackwardEuler(TridiagSolver::new(grid, cfg.dt)),
            Scheme::SplittingExponential => {
                let dx = grid.dx();
                let w = lattice_heat_weights(cfg.dt / (dx * dx));
                let half = w.len() - 1;
                let fits = match grid.boundary() {
                    Boundary::Periodic => 2 * half + 1 <= n,
                    Boundary::DirichletZero => 2 * half < n,
                };
                if fits && half <= MAX_DIRECT_HALF_WIDTH {
                    Diffusion::Kernel(w)
                } else {
                    let dt = cfg.dt;
                    Diffusion::Spectral(SpectralPlan::new(grid, |lam| (-lam * dt).exp()))
                }
            }
        };
        Ok(Stepper {
            grid: *grid,
            cfg: *cfg,
            diffusion,
            noise_factor: vec![0.0; n],
            work: vec![0.0; n],
            ext: Vec::new(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn check_sigma(&self, sigma: &SigmaSpec) -> Result<()> {
        if self.cfg.scheme == Scheme::SplittingExponential && sigma.linear_coefficient().is_none() {
            return Err(Error::Unsupported(format!(
                "the exponential splitting scheme needs a linear sigma, got {}",
                sigma.description()
            )));
        }
        Ok(())
    }

    /// σ̃ = σ(u)/u at every site, with the configured floor.
    pub fn ratios(&self, sigma: &SigmaSpec, u: &[f64], out: &mut [f64]) {
        let floor = self.cfg.ratio_floor;
        for (r, &x) in out.iter_mut().zip(u) {
            *r = sigma.ratio(x, floor);
        }
    }

    /// One slab of the σ-driven equation, in place. Returns the number of
    /// sites that came out negative (and were clipped under `ClipToZero`).
    pub fn advance(&mut self, u: &mut [f64], sigma: &SigmaSpec, dw: &[f64]) -> Result<usize> {
        self.check_sigma(sigma)?;
        self.fill_noise_factor(dw);
        let dt = self.cfg.dt;
        let dx = self.grid.dx();
        match self.cfg.scheme {
            Scheme::SemiImplicit => match sigma.kind() {
                SigmaKind::Linear { c } => {
                    let c = *c;
                    for ((w, &x), &g) in self.work.iter_mut().zip(u.iter()).zip(&self.noise_factor) {
                        *w = x + (c * x) * g;
                    }
                }
                SigmaKind::Custom { f, .. } => {
                    for ((w, &x), &g) in self.work.iter_mut().zip(u.iter()).zip(&self.noise_factor) {
                        *w = x + f(x) * g;
                    }
                }
            },
            Scheme::SplittingExponential => {
                let c = sigma.linear_coefficient().unwrap_or(0.0);
                let q = dt / dx;
                for ((w, &x), &g) in self.work.iter_mut().zip(u.iter()).zip(&self.noise_factor) {
                    *w = x * (c * g - 0.5 * c * c * q).exp();
                }
            }
        }
        self.diffuse(u);
        Ok(self.apply_policy(u))
    }

    /// One slab of the linear equation `∂ₜv = ½Δv + ratio·v·ξ`, in place.
    pub fn advance_tilde(&mut self, v: &mut [f64], ratio: &[f64], dw: &[f64]) -> usize {
        self.fill_noise_factor(dw);
        let dt = self.cfg.dt;
        let dx = self.grid.dx();
        match self.cfg.scheme {
            Scheme::SemiImplicit => {
                for (((w, &x), &g), &r) in self
                    .work
                    .iter_mut()
                    .zip(v.iter())
                    .zip(&self.noise_factor)
                    .zip(ratio)
                {
                    *w = x + (r * x) * g;
                }
            }
            Scheme::SplittingExponential => {
                let q = dt / dx;
                for (((w, &x), &g), &r) in self
                    .work
                    .iter_mut()
                    .zip(v.iter())
                    .zip(&self.noise_factor)
                    .zip(ratio)
                {
                    *w = x * (r * g - 0.5 * r * r * q).exp();
                }
            }
        }
        self.diffuse(v);
        self.apply_policy(v)
    }

    fn fill_noise_factor(&mut self, dw: &[f64]) {
        let inv_dx = 1.0 / self.grid.dx();
        for (g, &w) in self.noise_factor.iter_mut().zip(dw) {
            *g = w * inv_dx;
        }
    }

    /// Diffuses `self.work` into `out`.
    fn diffuse(&mut self, out: &mut [f64]) {
        if self.grid.boundary() == Boundary::DirichletZero {
            self.work[0] = 0.0;
        }
        match &mut self.diffusion {
            Diffusion::BackwardEuler(solver) => solver.solve(&self.work, out),
            Diffusion::Spectral(plan) => {
                out.copy_from_slice(&self.work);
                plan.apply(out);
            }
            Diffusion::Kernel(w) => match self.grid.boundary() {
                Boundary::Periodic => convolve_periodic(w, &self.work, &mut self.ext, out),
                Boundary::DirichletZero => convolve_dirichlet(w, &self.work, out),
            },
        }
    }

    fn apply_policy(&self, u: &mut [f64]) -> usize {
        let mut count = 0;
        match self.cfg.negativity_policy {
            NegativityPolicy::ClipToZero => {
                for x in u.iter_mut() {
                    if *x < 0.0 {
                        *x = 0.0;
                        count += 1;
                    }
                }
            }
            NegativityPolicy::Allow => count = u.iter().filter(|&&x| x < 0.0).count(),
        }
        count
    }
}

fn convolve_periodic(w: &[f64], input: &[f64], ext: &mut Vec<f64>, out: &mut [f64]) {
    let n = input.len();
    let half = w.len() - 1;
    ext.clear();
    ext.extend_from_slice(&input[n - half..]);
    ext.extend_from_slice(input);
    ext.extend_from_slice(&input[..half]);
    let w0 = w[0];
    for (o, &x) in out.iter_mut().zip(&ext[half..half + n]) {
        *o = w0 * x;
    }
    for (k, &wk) in w.iter().enumerate().skip(1) {
        let left = &ext[half - k..half - k + n];
        let right = &ext[half + k..half + k + n];
        for ((o, &a), &b) in out.iter_mut().zip(left).zip(right) {
            *o += wk * (a + b);
        }
    }
}

/// Kernel with odd images at sites `0` and `n`; each coefficient
/// `w(|i-j|) - w(i+j) - w(2n-i-j)` is formed before multiplying so the
/// result stays nonnegative for nonnegative input.
fn convolve_dirichlet(w: &[f64], input: &[f64], out: &mut [f64]) {
    let n = input.len();
    let half = w.len() - 1;
    let weight = |d: usize| if d <= half { w[d] } else { 0.0 };
    out[0] = 0.0;
    for i in 1..n {
        let lo = i.saturating_sub(half).max(1);
        let hi = (i + half).min(n - 1);
        let mut acc = 0.0;
        for j in lo..=hi {
            let d = i.abs_diff(j);
            let coeff = weight(d) - weight(i + j) - weight(2 * n - i - j);
            acc += coeff * input[j];
        }
        out[i] = acc;
    }
}

fn check_slice(grid: &Grid, cfg: &StepperConfig, w: &NoiseSlice) -> Result<()> {
    if !w.grid().is_compatible(grid) {
        return Err(Error::Coupling("noise slice grid differs from the field grid".into()));
    }
    if w.dt() != cfg.dt {
        return Err(Error::Coupling(format!(
            "noise slice dt {} differs from stepper dt {}",
            w.dt(),
            cfg.dt
        )));
    }
    Ok(())
}

/// One step of the σ-driven equation.
pub fn step(u: &Field, sigma: &SigmaSpec, cfg: &StepperConfig, w: &NoiseSlice) -> Result<Field> {
    check_slice(u.grid(), cfg, w)?;
    let mut stepper = Stepper::new(u.grid(), cfg)?;
    let mut values = u.values().to_vec();
    stepper.advance(&mut values, sigma, w.dw())?;
    Field::new(*u.grid(), values)
}

/// One step of the linear equation driven by `σ(u_prev)/u_prev · ξ`; `w` must
/// be the slice that advances `u_prev`.
pub fn step_tilde(
    v: &Field,
    u_prev: &Field,
    sigma: &SigmaSpec,
    cfg: &StepperConfig,
    w: &NoiseSlice,
) -> Result<Field> {
    if !v.grid().is_compatible(u_prev.grid()) {
        return Err(Error::Coupling("v and u_prev live on different grids".into()));
    }
    check_slice(v.grid(), cfg, w)?;
    let mut stepper = Stepper::new(v.grid(), cfg)?;
    let mut ratio = vec![0.0; v.grid().n_points()];
    stepper.ratios(sigma, u_prev.values(), &mut ratio);
    let mut values = v.values().to_vec();
    stepper.advance_tilde(&mut values, &ratio, w.dw());
    Field::new(*v.grid(), values)
}
