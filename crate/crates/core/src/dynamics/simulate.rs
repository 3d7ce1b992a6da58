use serde::{Deserialize, Serialize};

use crate::lattice::{sample_initial, Field, Grid, InitialCondition};
use crate::noise::{fill_increments, SeedSpec};
use crate::{Error, Result};

use super::{apply_semigroup, SigmaSpec, Stepper, StepperConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub l1: f64,
    pub sup: f64,
    pub clip_count: usize,
}

impl SeriesRow {
    fn of(t: f64, values: &[f64], dx: f64, clip_count: usize) -> Self {
        let (sum, sup) = values
            .iter()
            .fold((0.0f64, 0.0f64), |(s, m), v| (s + v.abs(), m.max(v.abs())));
        SeriesRow {
            t,
            l1: dx * sum,
            sup,
            clip_count,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `(t, u(t))` at the snapped snapshot times.
    pub snapshots: Vec<(f64, Field)>,
    /// Observables at `t = 0`.
    pub initial: SeriesRow,
    /// One row per step, `t = dt, 2dt, ...`.
    pub series: Vec<SeriesRow>,
    /// Master seed and stream; `step_index` is the first slab used (0).
    pub seed: SeedSpec,
    pub dt: f64,
}

impl Trajectory {
    pub fn final_field(&self) -> Option<&Field> {
        self.snapshots.last().map(|(_, f)| f)
    }

    pub fn total_clips(&self) -> usize {
        self.series.iter().map(|r| r.clip_count).sum()
    }

    /// `(t, l1)` at `t = 0` and after every step.
    pub fn mass_series(&self) -> Vec<(f64, f64)> {
        std::iter::once((self.initial.t, self.initial.l1))
            .chain(self.series.iter().map(|r| (r.t, r.l1)))
            .collect()
    }
}

/// Data handed to step observers after each slab.
pub struct StepContext<'a> {
    /// 1-based step number; the slab used was `step - 1`.
    pub step: usize,
    pub t: f64,
    pub prev: &'a [f64],
    pub next: &'a [f64],
    pub dw: &'a [f64],
    pub clips: usize,
    pub row: SeriesRow,
}

/// Number of steps of size `dt` that reach `t_end` (rounded to the nearest step).
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Config(format!("t_end must be positive, got {t_end}")));
    }
    let n = (t_end / dt).round();
    if n < 1.0 {
        return Err(Error::Config(format!("t_end = {t_end} is shorter than one step dt = {dt}")));
    }
    Ok(n as usize)
}

/// Snaps requested times to the nearest step index, dropping duplicates.
pub fn snap_times(times: &[f64], dt: f64, n_steps: usize) -> Result<Vec<usize>> {
    let mut steps = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("snapshot time {t} must be >= 0")));
        }
        let k = (t / dt).round() as usize;
        if k > n_steps {
            return Err(Error::Config(format!(
                "snapshot time {t} lies beyond t_end = {}",
                n_steps as f64 * dt
            )));
        }
        steps.push(k);
    }
    steps.sort_unstable();
    steps.dedup();
    Ok(steps)
}

/// Advances `u` for a fixed number of slabs while feeding observers.
pub struct Simulator {
    grid: Grid,
    sigma: SigmaSpec,
    stepper: Stepper,
    dw: Vec<f64>,
    prev: Vec<f64>,
}

impl Simulator {
    pub fn new(grid: &Grid, sigma: &SigmaSpec, cfg: &StepperConfig) -> Result<Self> {
        let stepper = Stepper::new(grid, cfg)?;
        stepper.check_sigma(sigma)?;
        Ok(Simulator {
            grid: *grid,
            sigma: sigma.clone(),
            stepper,
            dw: vec![0.0; grid.n_points()],
            prev: vec![0.0; grid.n_points()],
        })
    }

    pub fn dt(&self) -> f64 {
        self.stepper.config().dt
    }

    /// Runs `n_steps` slabs from `u` (modified in place). Slab `k` draws its
    /// noise from `seed.at_step(k)`.
    pub fn run<F>(&mut self, u: &mut [f64], seed: SeedSpec, n_steps: usize, mut observe: F) -> Result<()>
    where
        F: FnMut(&StepContext<'_>) -> Result<()>,
    {
        let dt = self.dt();
        let dx = self.grid.dx();
        for k in 0..n_steps {
            fill_increments(seed.at_step(k as u64), dt, dx, &mut self.dw);
            self.prev.copy_from_slice(u);
            let clips = self.stepper.advance(u, &self.sigma, &self.dw)?;
            let t = (k + 1) as f64 * dt;
            let row = SeriesRow::of(t, u, dx, clips);
            if !(row.l1.is_finite() && row.sup.is_finite()) {
                return Err(Error::Aborted {
                    step: k + 1,
                    last_valid_t: k as f64 * dt,
                });
            }
            observe(&StepContext {
                step: k + 1,
                t,
                prev: &self.prev,
                next: u,
                dw: &self.dw,
                clips,
                row,
            })?;
        }
        Ok(())
    }
}

/// Simulates one replica from `ic`, recording the per-step series and the
/// fields at `snapshot_times` (snapped to the step grid).
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    ic: &InitialCondition,
    grid: &Grid,
    sigma: &SigmaSpec,
    cfg: &StepperConfig,
    seed: SeedSpec,
    t_end: f64,
    snapshot_times: &[f64],
) -> Result<Trajectory> {
    let u0 = sample_initial(ic, grid)?;
    simulate_from_field(&u0, sigma, cfg, seed, t_end, snapshot_times)
}

/// [`simulate`] from an explicit initial field.
pub fn simulate_from_field(
    u0: &Field,
    sigma: &SigmaSpec,
    cfg: &StepperConfig,
    seed: SeedSpec,
    t_end: f64,
    snapshot_times: &[f64],
) -> Result<Trajectory> {
    let grid = *u0.grid();
    let n_steps = step_count(t_end, cfg.dt)?;
    let snaps = snap_times(snapshot_times, cfg.dt, n_steps)?;
    let mut sim = Simulator::new(&grid, sigma, cfg)?;
    let mut u = u0.values().to_vec();
    let initial = SeriesRow::of(0.0, &u, grid.dx(), 0);
    let mut snapshots = Vec::with_capacity(snaps.len());
    if snaps.first() == Some(&0) {
        snapshots.push((0.0, u0.clone()));
    }
    let mut series = Vec::with_capacity(n_steps);
    sim.run(&mut u, seed.at_step(0), n_steps, |ctx| {
        series.push(ctx.row);
        if snaps.binary_search(&ctx.step).is_ok() {
            snapshots.push((ctx.t, Field::from_raw(grid, ctx.next.to_vec())));
        }
        Ok(())
    })?;
    Ok(Trajectory {
        snapshots,
        initial,
        series,
        seed: seed.at_step(0),
        dt: cfg.dt,
    })
}

#[derive(Debug, Clone)]
pub struct CoupledTrajectory {
    pub u: Trajectory,
    pub parts: Vec<Trajectory>,
}

impl CoupledTrajectory {
    /// Largest `max_x |Σ_i v_i - u| / max_x |u|` over the snapshots.
    pub fn max_superposition_residual(&self) -> f64 {
        superposition_residual(&self.u, &self.parts)
    }
}

pub fn superposition_residual(u: &Trajectory, parts: &[Trajectory]) -> f64 {
    let mut worst = 0.0f64;
    for (s, (_, uf)) in u.snapshots.iter().enumerate() {
        let scale = uf.sup_norm().max(f64::MIN_POSITIVE);
        for (j, &uv) in uf.values().iter().enumerate() {
            let sum: f64 = parts.iter().map(|p| p.snapshots[s].1.values()[j]).sum();
            worst = worst.max((sum - uv).abs() / scale);
        }
    }
    worst
}

/// Advances `u` under σ and every part under the σ(u)/u-modulated linear
/// equation on identical noise slabs.
pub fn simulate_coupled(
    u0: &Field,
    parts: &[Field],
    sigma: &SigmaSpec,
    cfg: &StepperConfig,
    seed: SeedSpec,
    t_end: f64,
    snapshot_times: &[f64],
) -> Result<CoupledTrajectory> {
    let grid = *u0.grid();
    if parts.is_empty() {
        return Err(Error::Config("coupled simulation needs at least one part".into()));
    }
    for p in parts {
        if !p.grid().is_compatible(&grid) {
            return Err(Error::Coupling("initial parts live on different grids".into()));
        }
    }
    for j in 0..grid.n_points() {
        let s: f64 = parts.iter().map(|p| p.values()[j]).sum();
        if (s - u0.values()[j]).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "initial parts do not sum to u0 at site {j}: {s} vs {}",
                u0.values()[j]
            )));
        }
    }
    let n_steps = step_count(t_end, cfg.dt)?;
    let snaps = snap_times(snapshot_times, cfg.dt, n_steps)?;
    let dx = grid.dx();
    let n = grid.n_points();

    let mut u_stepper = Stepper::new(&grid, cfg)?;
    u_stepper.check_sigma(sigma)?;
    let mut v_stepper = Stepper::new(&grid, cfg)?;

    let mut u = u0.values().to_vec();
    let mut vs: Vec<Vec<f64>> = parts.iter().map(|p| p.values().to_vec()).collect();
    let mut ratio = vec![0.0; n];
    let mut dw = vec![0.0; n];

    let start = |vals: &[f64]| -> (SeriesRow, Vec<(f64, Field)>) {
        let row = SeriesRow::of(0.0, vals, dx, 0);
        let snaps0 = if snaps.first() == Some(&0) {
            vec![(0.0, Field::from_raw(grid, vals.to_vec()))]
        } else {
            Vec::new()
        };
        (row, snaps0)
    };
    let (u_init, u_snaps) = start(&u);
    let mut u_traj = Trajectory {
        snapshots: u_snaps,
        initial: u_init,
        series: Vec::with_capacity(n_steps),
        seed: seed.at_step(0),
        dt: cfg.dt,
    };
    let mut v_trajs: Vec<Trajectory> = vs
        .iter()
        .map(|v| {
            let (init, s) = start(v);
            Trajectory {
                snapshots: s,
                initial: init,
                series: Vec::with_capacity(n_steps),
                seed: seed.at_step(0),
                dt: cfg.dt,
            }
        })
        .collect();

    for k in 0..n_steps {
        fill_increments(seed.at_step(k as u64), cfg.dt, dx, &mut dw);
        u_stepper.ratios(sigma, &u, &mut ratio);
        let clips = u_stepper.advance(&mut u, sigma, &dw)?;
        let t = (k + 1) as f64 * cfg.dt;
        let row = SeriesRow::of(t, &u, dx, clips);
        if !(row.l1.is_finite() && row.sup.is_finite()) {
            return Err(Error::Aborted {
                step: k + 1,
                last_valid_t: k as f64 * cfg.dt,
            });
        }
        u_traj.series.push(row);
        let snap = snaps.binary_search(&(k + 1)).is_ok();
        if snap {
            u_traj.snapshots.push((t, Field::from_raw(grid, u.clone())));
        }
        for (v, traj) in vs.iter_mut().zip(v_trajs.iter_mut()) {
            let clips = v_stepper.advance_tilde(v, &ratio, &dw);
            let row = SeriesRow::of(t, v, dx, clips);
            if !(row.l1.is_finite() && row.sup.is_finite()) {
                return Err(Error::Aborted {
                    step: k + 1,
                    last_valid_t: k as f64 * cfg.dt,
                });
            }
            traj.series.push(row);
            if snap {
                traj.snapshots.push((t, Field::from_raw(grid, v.clone())));
            }
        }
    }
    Ok(CoupledTrajectory {
        u: u_traj,
        parts: v_trajs,
    })
}

/// `sup_x |u(t,x) - (S_t u0)(x)|` at every snapshot of `traj`: the size of
/// the discrete stochastic convolution term.
pub fn mild_decompose(traj: &Trajectory, ic: &InitialCondition) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(traj.snapshots.len());
    let Some((_, first)) = traj.snapshots.first() else {
        return Ok(out);
    };
    let u0 = sample_initial(ic, first.grid())?;
    for (t, field) in &traj.snapshots {
        let free = apply_semigroup(&u0, *t)?;
        let sup = field
            .values()
            .iter()
            .zip(free.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        out.push((*t, sup));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{decompose_unity, Scheme};
    use crate::lattice::Boundary;

    #[test]
    fn snapping_rounds_to_step_grid() {
        assert_eq!(snap_times(&[0.0, 0.26, 0.5, 0.5001], 0.05, 20).unwrap(), vec![0, 5, 10]);
        assert!(snap_times(&[1.2], 0.05, 20).is_err());
        assert!(snap_times(&[-0.1], 0.05, 20).is_err());
        assert_eq!(step_count(1.0, 0.0025).unwrap(), 400);
        assert!(step_count(0.001, 0.0025).is_err());
    }

    #[test]
    fn trajectory_shape_and_replay() {
        let g = Grid::periodic_with_spacing(5.0, 0.1).unwrap();
        let cfg = StepperConfig::new(Scheme::SemiImplicit, 0.01);
        let run = || {
            simulate(
                &InitialCondition::ConstantOne,
                &g,
                &SigmaSpec::linear(1.0),
                &cfg,
                SeedSpec::new(11, 2, 0),
                0.5,
                &[0.0, 0.25, 0.5],
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.series.len(), 50);
        assert_eq!(a.snapshots.len(), 3);
        assert!(a.series.windows(2).all(|w| w[0].t < w[1].t));
        assert!(a
            .series
            .iter()
            .zip(&b.series)
            .all(|(x, y)| x.l1.to_bits() == y.l1.to_bits() && x.sup.to_bits() == y.sup.to_bits()));
    }

    #[test]
    fn blow_up_aborts_with_last_valid_time() {
        let g = Grid::periodic_with_spacing(2.0, 0.1).unwrap();
        let cfg = StepperConfig::new(Scheme::SemiImplicit, 0.01);
        let s = SigmaSpec::linear(1e200);
        let err = simulate(&InitialCondition::ConstantOne, &g, &s, &cfg, SeedSpec::new(0, 0, 0), 1.0, &[])
            .unwrap_err();
        match err {
            Error::Aborted { step, last_valid_t } => {
                assert!(step >= 1);
                assert!((last_valid_t - (step - 1) as f64 * 0.01).abs() < 1e-12);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn single_part_equals_u() {
        let g = Grid::periodic_with_spacing(5.0, 0.1).unwrap();
        let u0 = sample_initial(&InitialCondition::ConstantOne, &g).unwrap();
        let cfg = StepperConfig::new(Scheme::SplittingExponential, 0.01);
        let c = simulate_coupled(&u0, &[u0.clone()], &SigmaSpec::linear(1.0), &cfg, SeedSpec::new(4, 0, 0), 0.5, &[0.5])
            .unwrap();
        let a = c.u.final_field().unwrap();
        let b = c.parts[0].final_field().unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn partition_superposition_and_positivity() {
        let g = Grid::periodic_with_spacing(8.0, 0.05).unwrap();
        let u0 = sample_initial(&InitialCondition::ConstantOne, &g).unwrap();
        let p = decompose_unity(4, &g).unwrap();
        let cfg = StepperConfig::new(Scheme::SplittingExponential, 0.0025);
        let c = simulate_coupled(&u0, &p.all_parts(), &SigmaSpec::linear(1.0), &cfg, SeedSpec::new(5, 0, 0), 1.0, &[0.5, 1.0])
            .unwrap();
        assert!(c.max_superposition_residual() <= 1e-10);
        assert!(c.parts.iter().all(|t| t.snapshots.iter().all(|(_, f)| f.is_nonnegative())));
    }

    #[test]
    fn parts_must_sum_to_u0() {
        let g = Grid::periodic_with_spacing(5.0, 0.1).unwrap();
        let u0 = sample_initial(&InitialCondition::ConstantOne, &g).unwrap();
        let half = u0.scaled(0.5).unwrap();
        let cfg = StepperConfig::new(Scheme::SemiImplicit, 0.01);
        let r = simulate_coupled(&u0, &[half], &SigmaSpec::linear(1.0), &cfg, SeedSpec::new(0, 0, 0), 0.1, &[]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn mild_term_vanishes_without_noise() {
        let g = Grid::periodic_with_spacing(10.0, 0.05).unwrap();
        let ic = InitialCondition::Gaussian { s0: 1.0 };
        let cfg = StepperConfig::new(Scheme::SplittingExponential, 0.01);
        let traj = simulate(&ic, &g, &SigmaSpec::zero(), &cfg, SeedSpec::new(0, 0, 0), 1.0, &[0.5, 1.0]).unwrap();
        for (_, sup) in mild_decompose(&traj, &ic).unwrap() {
            assert!(sup < 1e-10, "{sup}");
        }
    }

    #[test]
    fn dirichlet_run_keeps_boundary_zero() {
        let g = Grid::with_spacing(5.0, 0.1, Boundary::DirichletZero).unwrap();
        let cfg = StepperConfig::new(Scheme::SemiImplicit, 0.01);
        let traj = simulate(&InitialCondition::ConstantOne, &g, &SigmaSpec::linear(1.0), &cfg, SeedSpec::new(3, 0, 0), 0.2, &[0.2])
            .unwrap();
        assert_eq!(traj.final_field().unwrap().values()[0], 0.0);
    }
}
