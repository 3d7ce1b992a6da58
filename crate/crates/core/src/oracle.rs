//! Non-Monte-Carlo reference values.
//!
//! For `σ(u) = u` and `u0 ≡ 1` the second moment `m₂(t) = E[u(t,x)²]` solves
//! the renewal equation
//!
//! ```text
//! m₂(t) = 1 + ∫₀ᵗ m₂(s) / √(4π(t − s)) ds,
//! ```
//! whose kernel is `∫ p_{t−s}(y)² dy`. It is solved here by product
//! integration and cross-checked against `e^{t/4}(1 + erf(√t/2))`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::dynamics::heat_kernel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// Piecewise-linear interpolation of `m₂` with exact singular weights.
    ProductTrapezoid,
    /// Piecewise-constant (midpoint value) interpolation with exact singular
    /// weights, solved at cell midpoints.
    ProductMidpoint,
}

impl Quadrature {
    pub fn descriptor(&self) -> &'static str {
        match self {
            Quadrature::ProductTrapezoid => "product trapezoid, exact (t-s)^-1/2 weights",
            Quadrature::ProductMidpoint => "product midpoint, exact (t-s)^-1/2 weights",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolterraSolution {
    pub t_grid: Vec<f64>,
    pub m2: Vec<f64>,
    pub quadrature: Quadrature,
}

impl VolterraSolution {
    pub fn at_end(&self) -> f64 {
        *self.m2.last().expect("solution has at least one node")
    }

    /// Linear interpolation on the solution grid.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        let t_end = *self.t_grid.last().unwrap_or(&0.0);
        if !(t >= 0.0 && t <= t_end * (1.0 + 1e-12)) {
            return Err(Error::Parameter(format!("t = {t} outside the solved range [0, {t_end}]")));
        }
        let h = t_end / (self.t_grid.len() - 1) as f64;
        let pos = (t / h).min((self.t_grid.len() - 1) as f64);
        let i = (pos.floor() as usize).min(self.t_grid.len() - 2);
        let w = pos - i as f64;
        Ok(self.m2[i] * (1.0 - w) + self.m2[i + 1] * w)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "m2"]).map_err(csv_err)?;
        for (t, m) in self.t_grid.iter().zip(&self.m2) {
            out.write_record([t.to_string(), m.to_string()]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, quadrature: Quadrature) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut t_grid = Vec::new();
        let mut m2 = Vec::new();
        for rec in rd.deserialize::<(f64, f64)>() {
            let (t, m) = rec.map_err(csv_err)?;
            t_grid.push(t);
            m2.push(m);
        }
        if t_grid.len() < 2 {
            return Err(Error::Parse("oracle table needs at least two rows".into()));
        }
        Ok(VolterraSolution { t_grid, m2, quadrature })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// `e^{t/4}(1 + erf(√t/2))`.
pub fn m2_closed_form(t: f64) -> f64 {
    (t / 4.0).exp() * (1.0 + erf(t.sqrt() / 2.0))
}

/// Solves the renewal equation on `[0, t_end]` with `n_steps` uniform cells
/// using product trapezoid weights. The solve is repeated with `n_steps / 2`
/// cells; a relative change above 1e-3 at `t_end` is reported as a solver
/// error.
pub fn volterra_m2(t_end: f64, n_steps: usize) -> Result<VolterraSolution> {
    volterra_m2_with(t_end, n_steps, Quadrature::ProductTrapezoid)
}

pub fn volterra_m2_with(t_end: f64, n_steps: usize, rule: Quadrature) -> Result<VolterraSolution> {
    if n_steps < 100 {
        return Err(Error::Parameter(format!("volterra_m2 needs n_steps >= 100, got {n_steps}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Parameter(format!("volterra_m2 needs t_end > 0, got {t_end}")));
    }
    let fine = solve(t_end, n_steps, rule);
    let coarse = solve(t_end, n_steps / 2, rule);
    let (a, b) = (*fine.last().unwrap(), *coarse.last().unwrap());
    if !a.is_finite() || (a - b).abs() > 1e-3 * a.abs() {
        return Err(Error::Solver(format!(
            "m2({t_end}) not converged under step halving: {a} vs {b}"
        )));
    }
    let h = t_end / n_steps as f64;
    Ok(VolterraSolution {
        t_grid: (0..=n_steps).map(|i| i as f64 * h).collect(),
        m2: fine,
        quadrature: rule,
    })
}

fn solve(t_end: f64, n: usize, rule: Quadrature) -> Vec<f64> {
    match rule {
        Quadrature::ProductTrapezoid => solve_trapezoid(t_end, n),
        Quadrature::ProductMidpoint => solve_midpoint(t_end, n),
    }
}

fn solve_trapezoid(t_end: f64, n: usize) -> Vec<f64> {
    let h = t_end / n as f64;
    let c = 1.0 / (4.0 * PI).sqrt();
    // For a cell at distance d (in cells) from the evaluation node:
    //   left[d]  = ∫ u^{-1/2} (u - B)/h du,  right[d] = ∫ u^{-1/2} (A - u)/h du
    // over u ∈ [B, A] = [(d-1)h, dh].
    let mut left = vec![0.0; n + 1];
    let mut right = vec![0.0; n + 1];
    for d in 1..=n {
        let a = d as f64 * h;
        let b = (d - 1) as f64 * h;
        let (sa, sb) = (a.sqrt(), b.sqrt());
        let p32 = (a * sa - b * sb) * 2.0 / 3.0;
        left[d] = c * (p32 - 2.0 * b * (sa - sb)) / h;
        right[d] = c * (2.0 * a * (sa - sb) - p32) / h;
    }
    let mut m = vec![1.0; n + 1];
    for i in 1..=n {
        // cell j spans [t_j, t_{j+1}], distance d = i - j
        let mut acc = 1.0;
        for j in 0..i {
            let d = i - j;
            acc += left[d] * m[j];
            if j + 1 < i {
                acc += right[d] * m[j + 1];
            }
        }
        m[i] = acc / (1.0 - right[1]);
    }
    m
}

fn solve_midpoint(t_end: f64, n: usize) -> Vec<f64> {
    // Unknowns at cell midpoints s_j = (j + ½)h, m held constant per cell;
    // the equation is collocated at the midpoints and the grid values are
    // recovered by evaluating the integral at the nodes.
    let h = t_end / n as f64;
    let c = 1.0 / (4.0 * PI).sqrt();
    let cell = |lo: f64, hi: f64| 2.0 * c * (hi.max(0.0).sqrt() - lo.max(0.0).sqrt());
    let mut mid = vec![0.0; n];
    // weight of cell j at collocation point (i + ½)h depends on i - j only
    let mut w_mid = vec![0.0; n];
    w_mid[0] = cell(0.0, 0.5 * h);
    for d in 1..n {
        w_mid[d] = cell((d as f64 - 0.5) * h, (d as f64 + 0.5) * h);
    }
    for i in 0..n {
        let mut acc = 1.0;
        for j in 0..i {
            acc += w_mid[i - j] * mid[j];
        }
        mid[i] = acc / (1.0 - w_mid[0]);
    }
    let mut nodes = vec![1.0; n + 1];
    for (i, node) in nodes.iter_mut().enumerate().skip(1) {
        let mut acc = 1.0;
        for (j, mj) in mid.iter().enumerate().take(i) {
            acc += cell(((i - j - 1) as f64) * h, ((i - j) as f64) * h) * mj;
        }
        *node = acc;
    }
    nodes
}

/// Loads a cached solution from `dir` or solves and stores it. The file name
/// encodes `t_end`, `n_steps` and the rule.
pub fn volterra_m2_cached(dir: &Path, t_end: f64, n_steps: usize) -> Result<VolterraSolution> {
    let path = cache_path(dir, t_end, n_steps);
    if let Ok(file) = std::fs::File::open(&path) {
        if let Ok(sol) = VolterraSolution::read_csv(file, Quadrature::ProductTrapezoid) {
            if sol.t_grid.len() == n_steps + 1 {
                return Ok(sol);
            }
        }
    }
    let sol = volterra_m2(t_end, n_steps)?;
    std::fs::create_dir_all(dir)?;
    sol.write_csv(std::fs::File::create(&path)?)?;
    Ok(sol)
}

fn cache_path(dir: &Path, t_end: f64, n_steps: usize) -> PathBuf {
    dir.join(format!("volterra_m2_t{:016x}_n{n_steps}_trapezoid.csv", t_end.to_bits()))
}

/// `p_{s0+t}(x)`: the heat flow of `gaussian(s0)` data.
pub fn analytic_heat(s0: f64, t: f64, x: f64) -> Result<f64> {
    if !(s0 > 0.0) {
        return Err(Error::Parameter(format!("analytic_heat needs s0 > 0, got {s0}")));
    }
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("analytic_heat needs t >= 0, got {t}")));
    }
    heat_kernel(s0 + t, x)
}
