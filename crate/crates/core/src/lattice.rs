//! Uniform spatial lattices on `[-R, R)`, fields sampled on them, and the
//! discrete norms used throughout.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    /// Zero at the site `x = -R` and at the ghost site `x = R`.
    DirichletZero,
}

impl Boundary {
    fn tag(self) -> u8 {
        match self {
            Boundary::Periodic => 0,
            Boundary::DirichletZero => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Boundary::Periodic),
            1 => Ok(Boundary::DirichletZero),
            other => Err(Error::Parse(format!("unknown boundary tag {other}"))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    half_width: f64,
    n_points: usize,
    #[serde(default = "default_boundary")]
    boundary: Boundary,
}

fn default_boundary() -> Boundary {
    Boundary::Periodic
}

/// Uniform lattice `x_j = -R + j·dx`, `j = 0..n`, `dx = 2R/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr")]
pub struct Grid {
    half_width: f64,
    n_points: usize,
    boundary: Boundary,
}

impl TryFrom<GridRepr> for Grid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        Grid::new(r.half_width, r.n_points, r.boundary)
    }
}

impl Grid {
    pub fn new(half_width: f64, n_points: usize, boundary: Boundary) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Config(format!(
                "grid.half_width must be positive and finite, got {half_width}"
            )));
        }
        if n_points < 8 || n_points % 2 != 0 {
            return Err(Error::Config(format!(
                "grid.n_points must be even and at least 8, got {n_points}"
            )));
        }
        Ok(Grid {
            half_width,
            n_points,
            boundary,
        })
    }

    /// Periodic grid with the given spacing; `2R/dx` must be (close to) an even integer.
    pub fn periodic_with_spacing(half_width: f64, dx: f64) -> Result<Self> {
        Self::with_spacing(half_width, dx, Boundary::Periodic)
    }

    pub fn with_spacing(half_width: f64, dx: f64, boundary: Boundary) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::Config(format!("grid spacing must be positive, got {dx}")));
        }
        let n = (2.0 * half_width / dx).round();
        if ((n * dx) - 2.0 * half_width).abs() > 1e-9 * half_width {
            return Err(Error::Config(format!(
                "2R = {} is not a multiple of dx = {dx}",
                2.0 * half_width
            )));
        }
        Self::new(half_width, n as usize, boundary)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n_points as f64
    }

    /// Index of the site at `x = 0`.
    pub fn origin_index(&self) -> usize {
        self.n_points / 2
    }

    /// Coordinate of site `j`; symmetric about the origin index so that
    /// `x(origin_index) == 0.0` exactly.
    pub fn site(&self, j: usize) -> f64 {
        (j as f64 - (self.n_points / 2) as f64) * self.dx()
    }

    pub fn sites(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |j| self.site(j))
    }

    pub fn is_compatible(&self, other: &Grid) -> bool {
        self == other
    }
}

/// Real-valued function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::Config(format!(
                "field has {} values but the grid has {} points",
                values.len(),
                grid.n_points()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite field value at site {j}")));
        }
        Ok(Field { grid, values })
    }

    /// Wraps values that are known to be finite and of the right length.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_points());
        Field { grid, values }
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        Field::new(grid, vec![value; grid.n_points()])
    }

    pub fn zeros(grid: Grid) -> Self {
        Field::from_raw(grid, vec![0.0; grid.n_points()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value_at_origin(&self) -> f64 {
        self.values[self.grid.origin_index()]
    }

    pub fn l1_norm(&self) -> f64 {
        l1_norm(self)
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(self)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn scaled(&self, c: f64) -> Result<Field> {
        Field::new(self.grid, self.values.iter().map(|v| c * v).collect())
    }

    /// Pointwise sum; grids must match.
    pub fn add(&self, other: &Field) -> Result<Field> {
        if !self.grid.is_compatible(&other.grid) {
            return Err(Error::Coupling("cannot add fields on different grids".into()));
        }
        Field::new(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// Fraction of the mass carried by sites with `|x| ≥ 0.9 R`.
    pub fn outer_mass_fraction(&self) -> f64 {
        let total = self.l1_norm();
        if total == 0.0 {
            return 0.0;
        }
        let cut = 0.9 * self.grid.half_width();
        let dx = self.grid.dx();
        let outer: f64 = self
            .values
            .iter()
            .enumerate()
            .filter(|(j, _)| self.grid.site(*j).abs() >= cut)
            .map(|(_, v)| v.abs())
            .sum::<f64>()
            * dx;
        outer / total
    }

    /// True when more than 1% of the mass sits in the outer 10% of the domain.
    pub fn boundary_contaminated(&self) -> bool {
        self.outer_mass_fraction() > 0.01
    }

    /// CSV with header `x,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,value")?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.grid.site(j), v)?;
        }
        Ok(())
    }

    /// Binary snapshot: `R` (f64), `n_points` (u64), boundary tag (u8, 0 =
    /// periodic, 1 = dirichlet_zero), then the values as f64; all little-endian.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.grid.half_width().to_le_bytes())?;
        w.write_all(&(self.grid.n_points() as u64).to_le_bytes())?;
        w.write_all(&[self.grid.boundary().tag()])?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Field> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let half_width = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let grid = Grid::new(half_width, n, Boundary::from_tag(tag[0])?)?;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Field::new(grid, values)
    }
}

/// `dx · Σ_j |f_j|`.
pub fn l1_norm(f: &Field) -> f64 {
    f.grid.dx() * f.values.iter().map(|v| v.abs()).sum::<f64>()
}

/// `max_j |f_j|`.
pub fn sup_norm(f: &Field) -> f64 {
    f.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    ConstantOne,
    /// Hat function `max(0, 1 - |x - center| / half_support)`.
    Bump { center: f64, half_support: f64 },
    /// Heat kernel `p_{s0}(x)`.
    Gaussian { s0: f64 },
    Tabulated { values: Vec<f64> },
}

impl InitialCondition {
    pub fn description(&self) -> String {
        match self {
            InitialCondition::ConstantOne => "u0 = 1".to_string(),
            InitialCondition::Bump {
                center,
                half_support,
            } => format!("hat bump at {center} with half-support {half_support}"),
            InitialCondition::Gaussian { s0 } => format!("gaussian p_{s0}(x)"),
            InitialCondition::Tabulated { values } => {
                format!("tabulated ({} values)", values.len())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitialCondition::Bump { half_support, center } => {
                if !(half_support.is_finite() && *half_support > 0.0 && center.is_finite()) {
                    return Err(Error::Config(format!(
                        "initial.half_support must be positive, got {half_support}"
                    )));
                }
            }
            InitialCondition::Gaussian { s0 } => {
                if !(s0.is_finite() && *s0 > 0.0) {
                    return Err(Error::Config(format!("initial.s0 must be positive, got {s0}")));
                }
            }
            InitialCondition::Tabulated { values } => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("initial.values must be finite".into()));
                }
            }
            InitialCondition::ConstantOne => {}
        }
        Ok(())
    }
}

pub fn hat(x: f64, center: f64, half_support: f64) -> f64 {
    (1.0 - (x - center).abs() / half_support).max(0.0)
}

/// Pointwise evaluation of `ic` at the grid sites. Under a Dirichlet boundary
/// the boundary site is set to zero.
pub fn sample_initial(ic: &InitialCondition, grid: &Grid) -> Result<Field> {
    ic.validate()?;
    let mut values: Vec<f64> = match ic {
        InitialCondition::ConstantOne => vec![1.0; grid.n_points()],
        InitialCondition::Bump {
            center,
            half_support,
        } => grid.sites().map(|x| hat(x, *center, *half_support)).collect(),
        InitialCondition::Gaussian { s0 } => grid
            .sites()
            .map(|x| (-x * x / (2.0 * s0)).exp() / (2.0 * std::f64::consts::PI * s0).sqrt())
            .collect(),
        InitialCondition::Tabulated { values } => {
            if values.len() != grid.n_points() {
                return Err(Error::Config(format!(
                    "tabulated initial data has {} values, grid has {} points",
                    values.len(),
                    grid.n_points()
                )));
            }
            values.clone()
        }
    };
    if grid.boundary() == Boundary::DirichletZero {
        values[0] = 0.0;
    }
    Field::new(*grid, values)
}
