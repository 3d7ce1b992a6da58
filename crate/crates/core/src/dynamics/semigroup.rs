use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::lattice::{Boundary, Field, Grid};
use crate::{Error, Result};

/// `p_t(x) = (2πt)^{-1/2} exp(-x²/(2t))`.
pub fn heat_kernel(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Parameter(format!("heat kernel needs t > 0, got {t}")));
    }
    Ok((-x * x / (2.0 * t)).exp() / (2.0 * PI * t).sqrt())
}

/// Transition weights of the continuous-time random walk generated by
/// `½Δ_h`, i.e. `w_j = e^{-a} I_j(a)` with `a = t/dx²`, for `j = 0..=W`.
///
/// Computed by Miller's backward recurrence `I_{j-1} = I_{j+1} + (2j/a) I_j`
/// normalised through `w_0 + 2Σ_{j≥1} w_j = 1`, then truncated where the
/// weights drop below 1e-17 and renormalised. The result is strictly
/// decreasing in `j`.
pub fn lattice_heat_weights(a: f64) -> Vec<f64> {
    if a <= 0.0 {
        return vec![1.0];
    }
    let start = (a + 12.0 * (a + 1.0).sqrt() + 40.0).ceil() as usize;
    let mut vals = vec![0.0f64; start + 2];
    vals[start] = 1e-280;
    for j in (1..=start).rev() {
        vals[j - 1] = vals[j + 1] + (2.0 * j as f64 / a) * vals[j];
        if vals[j - 1] > 1e250 {
            for v in vals[j - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let total = vals[0] + 2.0 * vals[1..].iter().sum::<f64>();
    let mut w: Vec<f64> = vals.iter().map(|v| v / total).collect();
    let width = w.iter().rposition(|&v| v >= 1e-17).unwrap_or(0);
    w.truncate(width + 1);
    let total = w[0] + 2.0 * w[1..].iter().sum::<f64>();
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

/// Eigenvalues of `-½Δ_h` on a periodic ring of `n` sites.
pub(crate) fn ring_eigenvalues(n: usize, dx: f64) -> Vec<f64> {
    (0..n)
        .map(|k| (1.0 - (2.0 * PI * k as f64 / n as f64).cos()) / (dx * dx))
        .collect()
}

/// Diagonal operator in the Fourier basis of a ring, applied through FFTs.
/// Dirichlet grids are handled by odd extension onto a ring of `2n` sites.
pub(crate) struct SpectralPlan {
    boundary: Boundary,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    multiplier: Vec<f64>,
    buf: Vec<Complex<f64>>,
}

impl SpectralPlan {
    pub(crate) fn new<F: Fn(f64) -> f64>(grid: &Grid, symbol: F) -> Self {
        let n = grid.n_points();
        let ring = match grid.boundary() {
            Boundary::Periodic => n,
            Boundary::DirichletZero => 2 * n,
        };
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(ring);
        let inverse = planner.plan_fft_inverse(ring);
        let multiplier = ring_eigenvalues(ring, grid.dx())
            .into_iter()
            .map(|lam| symbol(lam) / ring as f64)
            .collect();
        SpectralPlan {
            boundary: grid.boundary(),
            n,
            forward,
            inverse,
            multiplier,
            buf: vec![Complex::new(0.0, 0.0); ring],
        }
    }

    pub(crate) fn apply(&mut self, values: &mut [f64]) {
        let n = self.n;
        match self.boundary {
            Boundary::Periodic => {
                for (b, v) in self.buf.iter_mut().zip(values.iter()) {
                    *b = Complex::new(*v, 0.0);
                }
            }
            Boundary::DirichletZero => {
                self.buf[0] = Complex::new(0.0, 0.0);
                self.buf[n] = Complex::new(0.0, 0.0);
                for j in 1..n {
                    self.buf[j] = Complex::new(values[j], 0.0);
                    self.buf[2 * n - j] = Complex::new(-values[j], 0.0);
                }
            }
        }
        self.forward.process(&mut self.buf);
        for (b, m) in self.buf.iter_mut().zip(&self.multiplier) {
            *b *= *m;
        }
        self.inverse.process(&mut self.buf);
        for (v, b) in values.iter_mut().zip(self.buf.iter()) {
            *v = b.re;
        }
        if self.boundary == Boundary::DirichletZero {
            values[0] = 0.0;
        }
    }
}

/// Lattice heat semigroup `S_t = exp(t·½Δ_h)` applied spectrally with
/// multipliers `exp(-λ_k t)`, `λ_k = (1 - cos(2πk/n))/dx²`.
pub fn apply_semigroup(f: &Field, t: f64) -> Result<Field> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Parameter(format!("semigroup time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    let mut values = f.values().to_vec();
    SpectralPlan::new(f.grid(), |lam| (-lam * t).exp()).apply(&mut values);
    Field::new(*f.grid(), values)
}
