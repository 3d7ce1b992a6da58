//! Scalar statistics of solutions and of replica ensembles.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    simulate_from_field, snap_times, step_count, SigmaSpec, Simulator, StepperConfig, Trajectory,
};
use crate::lattice::{sample_initial, Field, Grid, InitialCondition};
use crate::noise::SeedSpec;
use crate::replicas::run_replicas;
use crate::{Error, Result};

/// Replica counts below this trigger a power warning.
pub const MIN_REPLICAS_FOR_POWER: usize = 1000;
/// Sample kurtosis above which moment CIs are flagged as unreliable.
pub const HEAVY_TAIL_KURTOSIS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValleyParams {
    pub h0: f64,
}

impl ValleyParams {
    pub fn new(h0: f64) -> Result<Self> {
        let p = ValleyParams { h0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h0 > 0.0 && self.h0 < 1.0) {
            return Err(Error::Config(format!("h0 must lie in (0, 1), got {}", self.h0)));
        }
        Ok(())
    }
}

impl Default for ValleyParams {
    fn default() -> Self {
        ValleyParams { h0: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Valley {
    /// Largest lattice `ℓ = k·dx` with `f ≤ h0` on `|x| ≤ ℓ`, capped at `R`.
    pub length: f64,
    /// The condition held on every symmetric pair of sites.
    pub saturated: bool,
    /// `max f` over `|x| ≤ length`; `None` when `f(0) > h0`.
    pub sup_over_valley: Option<f64>,
}

pub fn valley_length(f: &Field, p: &ValleyParams) -> Valley {
    let g = f.grid();
    let v = f.values();
    let o = g.origin_index();
    if v[o] > p.h0 {
        return Valley {
            length: 0.0,
            saturated: false,
            sup_over_valley: None,
        };
    }
    let mut sup = v[o];
    let half = g.n_points() / 2;
    for k in 1..half {
        let (a, b) = (v[o - k], v[o + k]);
        if a > p.h0 || b > p.h0 {
            return Valley {
                length: (k - 1) as f64 * g.dx(),
                saturated: false,
                sup_over_valley: Some(sup),
            };
        }
        sup = sup.max(a).max(b);
    }
    Valley {
        length: g.half_width(),
        saturated: true,
        sup_over_valley: Some(if v[0] <= p.h0 { sup.max(v[0]) } else { sup }),
    }
}

/// `‖f‖_{L∞} / ‖f‖_{L¹}`.
pub fn peak_mass_ratio(f: &Field) -> Result<f64> {
    let mass = f.l1_norm();
    if mass <= 0.0 {
        return Err(Error::UndefinedStatistic("peak/mass ratio of a field with zero mass".into()));
    }
    Ok(f.sup_norm() / mass)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeZ {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    /// Ensemble mean of the mass at the earliest time.
    pub reference: f64,
    pub rows: Vec<TimeZ>,
    pub n_replicas: usize,
    pub max_abs_z: f64,
    pub power_warning: bool,
    pub pass: bool,
}

/// Per-time z-scores of the ensemble mean mass against the mass at the
/// earliest time. Each replica contributes `(t, l1)` pairs; their order is
/// irrelevant but every replica must carry the same times.
pub fn mass_martingale_test(series: &[Vec<(f64, f64)>]) -> Result<MartingaleReport> {
    let Some(first) = series.first() else {
        return Err(Error::Aggregation("no replicas to aggregate".into()));
    };
    let sorted = |s: &Vec<(f64, f64)>| {
        let mut s = s.clone();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        s
    };
    let base = sorted(first);
    if base.is_empty() {
        return Err(Error::Aggregation("empty mass series".into()));
    }
    let times: Vec<f64> = base.iter().map(|r| r.0).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(series.len()); times.len()];
    for (r, s) in series.iter().enumerate() {
        let s = sorted(s);
        if s.len() != times.len() || s.iter().zip(&times).any(|(a, t)| (a.0 - t).abs() > 1e-9 * t.abs().max(1.0)) {
            return Err(Error::Aggregation(format!("replica {r} has a different time grid")));
        }
        for (c, (_, m)) in cols.iter_mut().zip(s) {
            c.push(m);
        }
    }
    let n = series.len();
    let reference = mean(&cols[0]);
    let mut rows = Vec::with_capacity(times.len());
    for (t, c) in times.iter().zip(&cols) {
        let m = mean(c);
        let se = if n > 1 { (variance(c, m) / n as f64).sqrt() } else { 0.0 };
        let tol = 1e-12 * reference.abs().max(f64::MIN_POSITIVE);
        let z = if se <= tol {
            if (m - reference).abs() <= tol {
                0.0
            } else {
                (m - reference).signum() * f64::INFINITY
            }
        } else {
            (m - reference) / se
        };
        rows.push(TimeZ {
            t: *t,
            mean: m,
            std_error: se,
            z,
        });
    }
    let max_abs_z = rows.iter().fold(0.0f64, |a, r| a.max(r.z.abs()));
    Ok(MartingaleReport {
        reference,
        rows,
        n_replicas: n,
        max_abs_z,
        power_warning: n < MIN_REPLICAS_FOR_POWER,
        pass: max_abs_z <= 3.0,
    })
}

pub fn mass_martingale_from(trajs: &[Trajectory]) -> Result<MartingaleReport> {
    let series: Vec<Vec<(f64, f64)>> = trajs.iter().map(|t| t.mass_series()).collect();
    mass_martingale_test(&series)
}

/// Per-replica ingredients of the quadratic-variation check for
/// `M_t(φ) = Σ_steps Σ_j φ_j σ(u_j) dW_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QvSample {
    pub m: f64,
    /// `Σ_steps dt·dx Σ_j φ_j² u_j²`.
    pub q: f64,
    /// `Σ_steps dt·dx Σ_j φ_j² σ(u_j)²`.
    pub q_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvReport {
    pub t: f64,
    pub n_replicas: usize,
    pub var_empirical: f64,
    pub var_std_error: f64,
    /// `L_σ² · E[q]`.
    pub lower: f64,
    /// `Lip_σ² · E[q]`.
    pub upper: f64,
    /// `E[q_sigma]`, the exact discrete isometry value.
    pub isometry: f64,
    /// Linear σ: `|var / bound − 1|`.
    pub relative_error: Option<f64>,
    pub tolerance: f64,
    pub power_warning: bool,
    pub pass: bool,
}

pub fn qv_sample(
    u0: &Field,
    sigma: &SigmaSpec,
    cfg: &StepperConfig,
    phi: &Field,
    t: f64,
    seed: SeedSpec,
) -> Result<QvSample> {
    let grid = *u0.grid();
    if !phi.grid().is_compatible(&grid) {
        return Err(Error::Config("test function lives on a different grid".into()));
    }
    let n_steps = step_count(t, cfg.dt)?;
    let mut sim = Simulator::new(&grid, sigma, cfg)?;
    let mut u = u0.values().to_vec();
    let phi = phi.values();
    let w = cfg.dt * grid.dx();
    let mut s = QvSample {
        m: 0.0,
        q: 0.0,
        q_sigma: 0.0,
    };
    sim.run(&mut u, seed, n_steps, |ctx| {
        for ((&p, &x), &dw) in phi.iter().zip(ctx.prev).zip(ctx.dw) {
            if p != 0.0 {
                let sx = sigma.eval(x);
                s.m += p * sx * dw;
                s.q += p * p * x * x * w;
                s.q_sigma += p * p * sx * sx * w;
            }
        }
        Ok(())
    })?;
    Ok(s)
}

pub fn qv_report(samples: &[QvSample], sigma: &SigmaSpec, t: f64, tolerance: f64) -> Result<QvReport> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Aggregation("quadratic-variation check needs at least two replicas".into()));
    }
    let ms: Vec<f64> = samples.iter().map(|s| s.m).collect();
    let mm = mean(&ms);
    let var = variance(&ms, mm);
    let m4 = ms.iter().map(|x| (x - mm).powi(4)).sum::<f64>() / n as f64;
    let var_se = ((m4 - var * var).max(0.0) / n as f64).sqrt();
    let q = samples.iter().map(|s| s.q).sum::<f64>() / n as f64;
    let isometry = samples.iter().map(|s| s.q_sigma).sum::<f64>() / n as f64;
    let lower = sigma.l_sigma().powi(2) * q;
    let upper = sigma.lip_sigma().powi(2) * q;
    let (relative_error, pass) = if sigma.linear_coefficient().is_some() {
        if lower == 0.0 {
            (Some(0.0), var == 0.0)
        } else {
            let e = (var / lower - 1.0).abs();
            (Some(e), e <= tolerance)
        }
    } else {
        let slack = 3.0 * var_se;
        (None, var >= lower - slack && var <= upper + slack)
    };
    Ok(QvReport {
        t,
        n_replicas: n,
        var_empirical: var,
        var_std_error: var_se,
        lower,
        upper,
        isometry,
        relative_error,
        tolerance,
        power_warning: n < MIN_REPLICAS_FOR_POWER,
        pass,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn qv_bounds_test(
    ic: &InitialCondition,
    grid: &Grid,
    sigma: &SigmaSpec,
    cfg: &StepperConfig,
    phi: &Field,
    t: f64,
    n_replicas: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<QvReport> {
    let u0 = sample_initial(ic, grid)?;
    let samples = run_replicas(n_replicas as u64, threads, |r| {
        qv_sample(&u0, sigma, cfg, phi, t, SeedSpec::new(master_seed, r, 0))
    })?;
    qv_report(&samples, sigma, t, 0.05)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub k: u32,
    pub t: f64,
    pub estimate: f64,
    /// 95% normal-approximation half-width.
    pub ci_halfwidth: f64,
    pub std_error: f64,
    pub kurtosis: f64,
    pub heavy_tail_warning: bool,
    pub n_replicas: usize,
}

/// Monte Carlo estimate of `E[X^k]` from samples of `X`.
pub fn moment_from_samples(samples: &[f64], k: u32, t: f64) -> Result<MomentEstimate> {
    if k < 1 {
        return Err(Error::Parameter("moment order must be >= 1".into()));
    }
    if samples.len() < 2 {
        return Err(Error::Parameter("moment estimate needs at least two samples".into()));
    }
    let n = samples.len();
    let ys: Vec<f64> = samples.iter().map(|x| x.powi(k as i32)).collect();
    let m = mean(&ys);
    let var = variance(&ys, m);
    let se = (var / n as f64).sqrt();
    let m2c = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n as f64;
    let m4c = ys.iter().map(|y| (y - m).powi(4)).sum::<f64>() / n as f64;
    let kurtosis = if m2c > 0.0 { m4c / (m2c * m2c) } else { 0.0 };
    Ok(MomentEstimate {
        k,
        t,
        estimate: m,
        ci_halfwidth: 1.959_963_984_540_054 * se,
        std_error: se,
        kurtosis,
        heavy_tail_warning: kurtosis > HEAVY_TAIL_KURTOSIS,
        n_replicas: n,
    })
}

/// `u(t, 0)` per replica at each requested time.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginSamples {
    pub times: Vec<f64>,
    /// `values[r][i]` is replica `r` at `times[i]`.
    pub values: Vec<Vec<f64>>,
    pub clip_count: usize,
    pub site_updates: usize,
}

impl OriginSamples {
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[i]).collect()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn sample_origin(
    ic: &InitialCondition,
    grid: &Grid,
    sigma: &SigmaSpec,
    cfg: &StepperConfig,
    times: &[f64],
    n_replicas: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<OriginSamples> {
    let t_end = times.iter().cloned().fold(0.0, f64::max);
    let n_steps = step_count(t_end, cfg.dt)?;
    let snaps = snap_times(times, cfg.dt, n_steps)?;
    let u0 = sample_initial(ic, grid)?;
    let o = grid.origin_index();
    let per = run_replicas(n_replicas as u64, threads, |r| {
        let mut sim = Simulator::new(grid, sigma, cfg)?;
        let mut u = u0.values().to_vec();
        let mut out = Vec::with_capacity(snaps.len());
        if snaps.first() == Some(&0) {
            out.push(u[o]);
        }
        let mut clips = 0;
        sim.run(&mut u, SeedSpec::new(master_seed, r, 0), n_steps, |ctx| {
            clips += ctx.clips;
            if snaps.binary_search(&ctx.step).is_ok() {
                out.push(ctx.next[o]);
            }
            Ok(())
        })?;
        Ok((out, clips))
    })?;
    let clip_count = per.iter().map(|p| p.1).sum();
    Ok(OriginSamples {
        times: snaps.iter().map(|&k| k as f64 * cfg.dt).collect(),
        values: per.into_iter().map(|p| p.0).collect(),
        clip_count,
        site_updates: n_replicas * n_steps * grid.n_points(),
    })
}

/// Monte Carlo `E[u(t, 0)^k]` over `n_replicas` independent streams.
#[allow(clippy::too_many_arguments)]
pub fn mc_moment(
    ic: &InitialCondition,
    grid: &Grid,
    sigma: &SigmaSpec,
    cfg: &StepperConfig,
    k: u32,
    t: f64,
    n_replicas: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<MomentEstimate> {
    if k < 1 {
        return Err(Error::Parameter("moment order must be >= 1".into()));
    }
    if n_replicas < 100 {
        return Err(Error::Parameter(format!("mc_moment needs >= 100 replicas, got {n_replicas}")));
    }
    let s = sample_origin(ic, grid, sigma, cfg, &[t], n_replicas, master_seed, threads)?;
    moment_from_samples(&s.column(0), k, s.times[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Least squares of `log y` against `t^{1/3}`.
pub fn fit_cube_root(series: &[(f64, f64)]) -> Result<ScalingFit> {
    if series.len() < 3 {
        return Err(Error::Parameter(format!(
            "cube-root fit needs at least 3 points, got {}",
            series.len()
        )));
    }
    if series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::Parameter("fit times must be strictly increasing".into()));
    }
    if let Some(&(t, y)) = series.iter().find(|p| !(p.1 > 0.0)) {
        return Err(Error::Domain(format!("cube-root fit needs y > 0, got y = {y} at t = {t}")));
    }
    let xs: Vec<f64> = series.iter().map(|p| p.0.cbrt()).collect();
    let ys: Vec<f64> = series.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r_squared) = ols(&xs, &ys);
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
        n_points: series.len(),
    })
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot <= f64::EPSILON * ys.iter().map(|y| y * y).sum::<f64>() {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    (slope, intercept, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentCheckParams {
    pub k: u32,
    pub gamma: f64,
    pub beta: f64,
    pub theta: f64,
}

impl MomentCheckParams {
    pub fn new(k: u32, gamma: f64, beta: f64, theta: f64) -> Result<Self> {
        let p = MomentCheckParams { k, gamma, beta, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be >= 2, got {}", self.k)));
        }
        if !(self.gamma > 4.0 / 3.0 && self.gamma <= 2.0) {
            return Err(Error::Config(format!("gamma must lie in (4/3, 2], got {}", self.gamma)));
        }
        let beta_min = 6.0 / (3.0 * self.gamma - 4.0);
        if !(self.beta >= beta_min) {
            return Err(Error::Config(format!(
                "beta must be >= 6/(3 gamma - 4) = {beta_min}, got {}",
                self.beta
            )));
        }
        if !(self.theta > 0.0 && self.theta < 0.25) {
            return Err(Error::Config(format!("theta must lie in (0, 1/4), got {}", self.theta)));
        }
        Ok(())
    }

    /// `(3γ − 4)/2`.
    pub fn peak_exponent(&self) -> f64 {
        (3.0 * self.gamma - 4.0) / 2.0
    }

    /// `(3γ − 4)/3`.
    pub fn mass_exponent(&self) -> f64 {
        (3.0 * self.gamma - 4.0) / 3.0
    }
}

/// One observation for [`fit_moment_constant`]: `E[v(t,x)^k]` together with
/// `‖v0‖_{L∞}` and `(S_t v0)(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentObservation {
    pub t: f64,
    pub moment: f64,
    pub v0_sup: f64,
    pub heat: f64,
}

/// Smallest `A > 0` with `E[v^k]^{2/k} ≤ A ‖v0‖_∞ (S_t v0)(x) e^{A k² t}` on
/// every observation.
pub fn fit_moment_constant(k: u32, obs: &[MomentObservation]) -> Result<f64> {
    if k < 2 {
        return Err(Error::Parameter("moment order must be >= 2".into()));
    }
    if obs.is_empty() {
        return Err(Error::Parameter("no observations to fit".into()));
    }
    let kk = (k * k) as f64;
    let holds = |a: f64| {
        obs.iter().all(|o| {
            let lhs = o.moment.max(0.0).powf(2.0 / k as f64);
            lhs <= a * o.v0_sup * o.heat * (a * kk * o.t).exp()
        })
    };
    if obs.iter().any(|o| !(o.v0_sup > 0.0 && o.heat > 0.0)) {
        return Err(Error::Domain("moment-constant fit needs positive initial data".into()));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while !holds(hi) {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Solver("moment constant exceeds 1e12".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTimeRow {
    pub n: f64,
    pub horizon: f64,
    /// `P{‖v(N^{−γ})‖_∞ ≥ N}`.
    pub freq_peak_end: f64,
    /// `P{sup_{s ≤ N^{−γ}} ‖v(s)‖_∞ ≥ 2N}`.
    pub freq_peak_path: f64,
    /// `P{inf mass ≤ ½ or sup mass ≥ 2}` on `[0, N^{−γ}]`.
    pub freq_mass: f64,
    /// Envelopes `C e^{−N^a}`, `C e^{−N^a/2}` and `L e^{−N^b/L}` with the
    /// constants fitted at the smallest `N`.
    pub envelope: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTimeReport {
    pub params: MomentCheckParams,
    pub n_replicas: usize,
    pub rows: Vec<ShortTimeRow>,
    pub fitted_constants: [f64; 3],
    pub within_envelope: bool,
    pub nonincreasing: bool,
    pub power_warning: bool,
    pub pass: bool,
}

/// Normalised hat with `‖v0‖_{L¹} = 1` and `‖v0‖_{L∞} ≈ N/2`.
pub fn short_time_initial(grid: &Grid, n: f64) -> Result<Field> {
    let half = 2.0 / n;
    if grid.dx() > half / 2.0 {
        return Err(Error::Config(format!(
            "dx = {} does not resolve the initial spike for N = {n}; need dx <= {}",
            grid.dx(),
            half / 2.0
        )));
    }
    let f = sample_initial(
        &InitialCondition::Bump {
            center: 0.0,
            half_support: half,
        },
        grid,
    )?;
    let mass = f.l1_norm();
    f.scaled(1.0 / mass)
}

/// Event frequencies over `[0, N^{−γ}]` for each `N` in `ns`.
#[allow(clippy::too_many_arguments)]
pub fn short_time_control_check(
    params: &MomentCheckParams,
    grid: &Grid,
    sigma: &SigmaSpec,
    cfg: &StepperConfig,
    ns: &[f64],
    n_replicas: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<ShortTimeReport> {
    params.validate()?;
    if ns.is_empty() || ns.iter().any(|n| !(*n >= 1.0)) || ns.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("N values must be >= 1 and strictly increasing".into()));
    }
    let mut freqs = Vec::with_capacity(ns.len());
    for (i, &n) in ns.iter().enumerate() {
        let horizon = n.powf(-params.gamma);
        let steps = step_count(horizon, cfg.dt)?;
        let v0 = short_time_initial(grid, n)?;
        let events = run_replicas(n_replicas as u64, threads, |r| {
            let seed = SeedSpec::new(master_seed, (i as u64) << 40 | r, 0);
            let traj = simulate_from_field(&v0, sigma, cfg, seed, steps as f64 * cfg.dt, &[])?;
            let end = traj.series.last().map(|r| r.sup).unwrap_or(traj.initial.sup);
            let path_sup = traj.series.iter().map(|r| r.sup).fold(traj.initial.sup, f64::max);
            let masses = traj.mass_series();
            let lo = masses.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
            let hi = masses.iter().map(|m| m.1).fold(0.0, f64::max);
            Ok([end >= n, path_sup >= 2.0 * n, lo <= 0.5 || hi >= 2.0])
        })?;
        let count = |j: usize| events.iter().filter(|e| e[j]).count() as f64 / n_replicas as f64;
        freqs.push((n, horizon, [count(0), count(1), count(2)]));
    }
    let a = params.peak_exponent();
    let b = params.mass_exponent();
    let rates = |n: f64| [n.powf(a), 0.5 * n.powf(a)];
    let (n0, _, f0) = freqs[0];
    let r0 = rates(n0);
    let c1 = f0[0] * r0[0].exp();
    let c2 = f0[1] * r0[1].exp();
    // smallest L ≥ 1 with f ≤ L e^{−N^b/L} at the calibration N
    let mass_env = |l: f64, n: f64| l * (-n.powf(b) / l).exp();
    let mut l = 1.0;
    while mass_env(l, n0) < f0[2] && l < 1e9 {
        l *= 1.01;
    }
    let fitted = [c1, c2, l];
    let se = |p: f64| (p * (1.0 - p) / n_replicas as f64).sqrt().max(1.0 / n_replicas as f64);
    let mut rows = Vec::with_capacity(freqs.len());
    let mut within = true;
    for &(n, horizon, f) in &freqs {
        let r = rates(n);
        let env = [c1 * (-r[0]).exp(), c2 * (-r[1]).exp(), mass_env(l, n)];
        for j in 0..3 {
            if f[j] > env[j] + 3.0 * se(env[j]) {
                within = false;
            }
        }
        rows.push(ShortTimeRow {
            n,
            horizon,
            freq_peak_end: f[0],
            freq_peak_path: f[1],
            freq_mass: f[2],
            envelope: env,
        });
    }
    let nonincreasing = freqs.windows(2).all(|w| {
        (0..3).all(|j| w[1].2[j] <= w[0].2[j] + 3.0 * se(w[0].2[j]))
    });
    Ok(ShortTimeReport {
        params: *params,
        n_replicas,
        rows,
        fitted_constants: fitted,
        within_envelope: within,
        nonincreasing,
        power_warning: n_replicas < MIN_REPLICAS_FOR_POWER,
        pass: within && nonincreasing,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance about `m`.
pub fn variance(xs: &[f64], m: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - w) + v[i + 1] * w
    } else {
        v[i]
    }
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Boundary;
    use proptest::prelude::*;

    fn integer_grid() -> Grid {
        Grid::new(6.0, 12, Boundary::Periodic).unwrap()
    }

    #[test]
    fn valley_examples() {
        let g = integer_grid();
        let p = ValleyParams::default();
        let hi = Field::constant(g, 1.0).unwrap();
        assert_eq!(valley_length(&hi, &p).length, 0.0);
        assert!(valley_length(&hi, &p).sup_over_valley.is_none());
        let lo = Field::constant(g, 0.25).unwrap();
        let v = valley_length(&lo, &p);
        assert_eq!(v.length, 6.0);
        assert!(v.saturated);
        // sites -6..=5; the listed profile lives on -5..=5
        let vals = vec![0.9, 0.9, 0.8, 0.3, 0.2, 0.1, 0.05, 0.1, 0.3, 0.9, 0.8, 0.9];
        let f = Field::new(g, vals).unwrap();
        let v = valley_length(&f, &p);
        assert_eq!(v.length, 2.0);
        assert_eq!(v.sup_over_valley, Some(0.3));
        assert!(!v.saturated);
    }

    #[test]
    fn h0_range_enforced() {
        assert!(ValleyParams::new(0.0).is_err());
        assert!(ValleyParams::new(1.0).is_err());
        assert!(ValleyParams::new(0.3).is_ok());
    }

    #[test]
    fn peak_mass_examples() {
        let g = Grid::new(4.0, 80, Boundary::Periodic).unwrap();
        assert!((peak_mass_ratio(&Field::constant(g, 1.0).unwrap()).unwrap() - 0.125).abs() < 1e-12);
        let mut spike = vec![0.0; 80];
        spike[40] = 1.0;
        let r = peak_mass_ratio(&Field::new(g, spike).unwrap()).unwrap();
        assert!((r - 10.0).abs() < 1e-9);
        let fine = Grid::periodic_with_spacing(4.0, 0.001).unwrap();
        let hat = sample_initial(&InitialCondition::Bump { center: 0.0, half_support: 1.0 }, &fine).unwrap();
        assert!((peak_mass_ratio(&hat).unwrap() - 1.0).abs() < 1e-5);
        assert!(matches!(peak_mass_ratio(&Field::zeros(g)), Err(Error::UndefinedStatistic(_))));
    }

    #[test]
    fn martingale_report_degenerate_and_reversed() {
        let rows: Vec<Vec<(f64, f64)>> = (0..5)
            .map(|r| vec![(0.0, 1.0), (0.5, 1.0 + 0.1 * (r as f64 - 2.0)), (1.0, 1.0)])
            .collect();
        let a = mass_martingale_test(&rows).unwrap();
        let rev: Vec<Vec<(f64, f64)>> = rows.iter().map(|r| r.iter().rev().cloned().collect()).collect();
        let b = mass_martingale_test(&rev).unwrap();
        assert_eq!(a, b);
        assert!(a.rows.iter().all(|r| r.z == 0.0));
        assert!(a.power_warning);
        let mut bad = rows.clone();
        bad[3][1].0 = 0.4;
        assert!(matches!(mass_martingale_test(&bad), Err(Error::Aggregation(_))));
    }

    #[test]
    fn cube_root_fit_examples() {
        let ts = [1.0, 8.0, 27.0, 64.0, 125.0];
        let s: Vec<(f64, f64)> = ts.iter().map(|&t| (t, (-2.0 * f64::cbrt(t)).exp())).collect();
        let f = fit_cube_root(&s).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12);
        assert!(f.intercept.abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let c: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 3.0)).collect();
        assert_eq!(fit_cube_root(&c).unwrap().slope, 0.0);
        assert!(fit_cube_root(&s[..2]).is_err());
        let mut neg = s.clone();
        neg[2].1 = 0.0;
        assert!(matches!(fit_cube_root(&neg), Err(Error::Domain(_))));
    }

    #[test]
    fn moment_params_validation() {
        assert!(MomentCheckParams::new(2, 5.0 / 3.0, 6.0, 0.1).is_ok());
        assert!(MomentCheckParams::new(1, 5.0 / 3.0, 6.0, 0.1).is_err());
        assert!(MomentCheckParams::new(2, 4.0 / 3.0, 100.0, 0.1).is_err());
        assert!(MomentCheckParams::new(2, 5.0 / 3.0, 5.9, 0.1).is_err());
        assert!(MomentCheckParams::new(2, 2.0, 3.0, 0.25).is_err());
    }

    #[test]
    fn moment_constant_is_tight() {
        let obs: Vec<MomentObservation> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&t| MomentObservation {
                t,
                moment: crate::oracle::m2_closed_form(t),
                v0_sup: 1.0,
                heat: 1.0,
            })
            .collect();
        let a = fit_moment_constant(2, &obs).unwrap();
        let check = |a: f64| obs.iter().all(|o| o.moment <= a * (4.0 * a * o.t).exp());
        assert!(check(a));
        assert!(!check(a * (1.0 - 1e-6)));
    }

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    proptest! {
        #[test]
        fn valley_monotone_in_h0(vals in proptest::collection::vec(0.0f64..1.0, 32), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let g = Grid::new(8.0, 32, Boundary::Periodic).unwrap();
            let f = Field::new(g, vals).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let vl = valley_length(&f, &ValleyParams::new(lo).unwrap());
            let vh = valley_length(&f, &ValleyParams::new(hi).unwrap());
            prop_assert!(vl.length <= vh.length);
            if let Some(s) = vh.sup_over_valley {
                let direct = g.sites().zip(f.values()).filter(|(x, _)| x.abs() <= vh.length + 1e-12).map(|(_, v)| *v).fold(0.0, f64::max);
                prop_assert!(s <= hi && (direct - s).abs() < 1e-15 || vh.saturated);
            }
        }

        #[test]
        fn peak_mass_scale_invariant(vals in proptest::collection::vec(0.0f64..5.0, 16), c in 1e-3f64..1e3) {
            let g = Grid::new(2.0, 16, Boundary::Periodic).unwrap();
            let f = Field::new(g, vals).unwrap();
            prop_assume!(f.l1_norm() > 0.0);
            let r1 = peak_mass_ratio(&f).unwrap();
            let r2 = peak_mass_ratio(&f.scaled(c).unwrap()).unwrap();
            prop_assert!((r1 - r2).abs() <= 1e-12 * r1);
        }

        #[test]
        fn planted_fit_recovered(slope in -5.0f64..5.0, icpt in -3.0f64..3.0) {
            let s: Vec<(f64, f64)> = (1..8).map(|i| { let t = i as f64 * 3.0; (t, (icpt + slope * t.cbrt()).exp()) }).collect();
            let f = fit_cube_root(&s).unwrap();
            prop_assert!((f.slope - slope).abs() < 1e-9);
            prop_assert!((f.intercept - icpt).abs() < 1e-9);
        }
    }
}
