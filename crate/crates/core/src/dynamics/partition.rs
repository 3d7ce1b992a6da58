use crate::lattice::{hat, Boundary, Field, Grid};
use crate::{Error, Result};

/// Partition of the constant function 1 into hats `v^{(i)}` centred at the
/// integers `i = -M..M-1` (support `[i-1, i+1]`) and the remainder
/// `tail = 1 - Σ_i v^{(i)}`.
#[derive(Debug, Clone)]
pub struct UnityPartition {
    pub m: usize,
    /// Hats ordered by centre, `-M` first.
    pub parts: Vec<Field>,
    pub tail: Field,
}

impl UnityPartition {
    pub fn center(&self, k: usize) -> i64 {
        k as i64 - self.m as i64
    }

    /// All `2M + 1` pieces, tail last.
    pub fn all_parts(&self) -> Vec<Field> {
        let mut v = self.parts.clone();
        v.push(self.tail.clone());
        v
    }
}

pub fn decompose_unity(m: usize, grid: &Grid) -> Result<UnityPartition> {
    if m == 0 {
        return Err(Error::Config("decomposition needs M >= 1".into()));
    }
    let needed = m as f64 + 1.0;
    if grid.half_width() <= needed {
        return Err(Error::Config(format!(
            "domain half-width {} does not cover [-{needed}, {needed}]",
            grid.half_width()
        )));
    }
    let n = grid.n_points();
    let mut sum = vec![0.0; n];
    let mut parts = Vec::with_capacity(2 * m);
    for i in -(m as i64)..(m as i64) {
        let mut values: Vec<f64> = grid.sites().map(|x| hat(x, i as f64, 1.0)).collect();
        if grid.boundary() == Boundary::DirichletZero {
            values[0] = 0.0;
        }
        for (s, v) in sum.iter_mut().zip(&values) {
            *s += v;
        }
        parts.push(Field::new(*grid, values)?);
    }
    let mut tail: Vec<f64> = sum.iter().map(|s| (1.0 - s).max(0.0)).collect();
    if grid.boundary() == Boundary::DirichletZero {
        tail[0] = 0.0;
    }
    Ok(UnityPartition {
        m,
        parts,
        tail: Field::new(*grid, tail)?,
    })
}
