//! Barlow–Taylor macroscopic dimension of point sets in ℝ and ℝ².
//!
//! Shells are `𝒱_n = (−eⁿ, eⁿ]^d`, `𝒮_0 = 𝒱_0`, `𝒮_{n+1} = 𝒱_{n+1} ∖ 𝒱_n`, and
//!
//! ```text
//! ν_ρⁿ(E) = inf Σ_i (side(Q_i)/eⁿ)^ρ
//! ```
//! over covers of `E ∩ 𝒮_n` by upright boxes of side ≥ 1. The infimum is
//! replaced by the minimum over a fixed family of covers, so every value is
//! an upper bound. Each shell is split into halves (d = 1) or quadrants
//! (d = 2) and covered piecewise, which keeps every box side ≤ eⁿ.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::{Error, Result};

/// Default saturation tolerance of [`dim_estimate`].
pub const TAU_SAT: f64 = 1e-2;
/// Halves with at most this many pieces are covered by exact dynamic programming.
const DP_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Element {
    Point([f64; 2]),
    /// Closed interval `[lo, hi]`; one-dimensional sets only.
    Interval { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellSet {
    dim: usize,
    elements: Vec<Element>,
}

fn shell_bound(n: usize) -> f64 {
    (n as f64).exp()
}

/// Smallest `n ≥ 0` with `−eⁿ < c ≤ eⁿ`.
pub fn coordinate_shell(c: f64) -> usize {
    let inside = |n: usize| -shell_bound(n) < c && c <= shell_bound(n);
    let mut n = if c.abs() <= 1.0 { 0 } else { c.abs().ln().ceil().max(0.0) as usize };
    while n > 0 && inside(n - 1) {
        n -= 1;
    }
    while !inside(n) {
        n += 1;
    }
    n
}

impl ShellSet {
    pub fn new(dim: usize, elements: Vec<Element>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("shell sets live in dimension 1 or 2, got {dim}")));
        }
        for e in &elements {
            match e {
                Element::Point(p) => {
                    if !(p[0].is_finite() && p[1].is_finite()) {
                        return Err(Error::Config("point coordinates must be finite".into()));
                    }
                    if dim == 1 && p[1] != 0.0 {
                        return Err(Error::Config("one-dimensional points carry a zero second coordinate".into()));
                    }
                }
                Element::Interval { lo, hi } => {
                    if dim != 1 {
                        return Err(Error::Unsupported("intervals are only supported in dimension 1".into()));
                    }
                    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                        return Err(Error::Config(format!("invalid interval [{lo}, {hi}]")));
                    }
                }
            }
        }
        Ok(ShellSet { dim, elements })
    }

    pub fn points_1d<I: IntoIterator<Item = f64>>(xs: I) -> Self {
        ShellSet {
            dim: 1,
            elements: xs.into_iter().map(|x| Element::Point([x, 0.0])).collect(),
        }
    }

    pub fn points_2d<I: IntoIterator<Item = [f64; 2]>>(ps: I) -> Self {
        ShellSet {
            dim: 2,
            elements: ps.into_iter().map(Element::Point).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn union(&self, other: &ShellSet) -> Result<ShellSet> {
        if self.dim != other.dim {
            return Err(Error::Config("cannot unite sets of different dimension".into()));
        }
        let mut elements = self.elements.clone();
        elements.extend_from_slice(&other.elements);
        Ok(ShellSet { dim: self.dim, elements })
    }

    /// Shell index of a point: the smallest `n` with the point in `𝒱_n`.
    pub fn shell_of(p: [f64; 2], dim: usize) -> usize {
        let n = coordinate_shell(p[0]);
        if dim == 2 {
            n.max(coordinate_shell(p[1]))
        } else {
            n
        }
    }

    /// Largest shell index touched by a point of the set.
    pub fn max_shell(&self) -> Option<usize> {
        self.elements
            .iter()
            .map(|e| match e {
                Element::Point(p) => Self::shell_of(*p, self.dim),
                Element::Interval { lo, hi } => coordinate_shell(*lo).max(coordinate_shell(*hi)),
            })
            .max()
    }

    /// Reads points from CSV with one column per coordinate. A leading
    /// non-numeric row is taken as a header.
    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut pts: Vec<[f64; 2]> = Vec::new();
        let mut dim = 0;
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let vals = match vals {
                Ok(v) => v,
                Err(_) if i == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("row {}: {e}", i + 1))),
            };
            if dim == 0 {
                dim = vals.len();
                if dim != 1 && dim != 2 {
                    return Err(Error::Parse(format!("expected 1 or 2 coordinate columns, got {dim}")));
                }
            } else if vals.len() != dim {
                return Err(Error::Parse(format!("row {} has {} columns, expected {dim}", i + 1, vals.len())));
            }
            pts.push([vals[0], if dim == 2 { vals[1] } else { 0.0 }]);
        }
        let dim = dim.max(1);
        Self::new(dim, pts.into_iter().map(Element::Point).collect())
    }

    /// Pieces of `E ∩ 𝒮_n`, grouped per half-line (d = 1) or quadrant (d = 2).
    fn shell_pieces(&self, n: usize) -> Vec<Vec<Piece>> {
        let mut groups: Vec<Vec<Piece>> = vec![Vec::new(); if self.dim == 1 { 2 } else { 4 }];
        let inner = if n == 0 { 0.0 } else { shell_bound(n - 1) };
        let outer = shell_bound(n);
        for e in &self.elements {
            match *e {
                Element::Point(p) => {
                    if Self::shell_of(p, self.dim) != n {
                        continue;
                    }
                    let g = if self.dim == 1 {
                        usize::from(p[0] > 0.0)
                    } else {
                        usize::from(p[0] > 0.0) + 2 * usize::from(p[1] > 0.0)
                    };
                    groups[g].push(Piece { lo: p, hi: p });
                }
                Element::Interval { lo, hi } => {
                    // positive half (inner, outer], negative half (−outer, −inner]
                    let (a, b) = (lo.max(inner), hi.min(outer));
                    if a <= b && b > inner {
                        groups[1].push(Piece { lo: [a.max(inner), 0.0], hi: [b, 0.0] });
                    }
                    let (a, b) = (lo.max(-outer), hi.min(-inner));
                    if a <= b && a > -outer {
                        groups[0].push(Piece { lo: [a, 0.0], hi: [b, 0.0] });
                    }
                }
            }
        }
        groups.retain(|g| !g.is_empty());
        groups
    }
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    lo: [f64; 2],
    hi: [f64; 2],
}

/// A cover summarised as `(side, multiplicity)` pairs.
type SideList = Vec<(f64, u64)>;

fn compress(mut sides: Vec<f64>) -> SideList {
    sides.sort_by(f64::total_cmp);
    let mut out: SideList = Vec::new();
    for s in sides {
        match out.last_mut() {
            Some((v, c)) if *v == s => *c += 1,
            _ => out.push((s, 1)),
        }
    }
    out
}

fn cover_value(sides: &SideList, scale: f64, rho: f64) -> f64 {
    sides.iter().map(|(s, c)| *c as f64 * (s / scale).powf(rho)).sum()
}

/// ρ-independent cover data for one half or quadrant of a shell.
#[derive(Debug, Clone)]
struct GroupCovers {
    /// Sorted 1-D pieces kept for the exact dynamic program.
    dp: Option<Vec<(f64, f64)>>,
    candidates: Vec<SideList>,
}

impl GroupCovers {
    fn build(pieces: &[Piece], dim: usize, scale: f64) -> Self {
        let mut candidates = Vec::new();
        let mut dp = None;
        if dim == 1 {
            let mut iv: Vec<(f64, f64)> = pieces.iter().map(|p| (p.lo[0], p.hi[0])).collect();
            iv.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            // merged maximal runs with gap < 1
            let mut runs: Vec<(f64, f64)> = Vec::new();
            for &(a, b) in &iv {
                match runs.last_mut() {
                    Some(r) if a - r.1 < 1.0 => r.1 = r.1.max(b),
                    _ => runs.push((a, b)),
                }
            }
            // dyadic merges of adjacent runs; the last level is the bounding box
            let mut size = 1usize;
            loop {
                let sides: Vec<f64> = runs
                    .chunks(size)
                    .map(|c| {
                        let hi = c.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
                        (hi - c[0].0).max(1.0)
                    })
                    .collect();
                candidates.push(compress(sides));
                if size >= runs.len() {
                    break;
                }
                size *= 2;
            }
            candidates.extend(grid_covers_1d(&iv, scale));
            if iv.len() <= DP_LIMIT {
                dp = Some(iv);
            }
        } else {
            candidates.extend(grid_covers_2d(pieces, scale));
            let lo0 = pieces.iter().map(|p| p.lo[0]).fold(f64::INFINITY, f64::min);
            let hi0 = pieces.iter().map(|p| p.hi[0]).fold(f64::NEG_INFINITY, f64::max);
            let lo1 = pieces.iter().map(|p| p.lo[1]).fold(f64::INFINITY, f64::min);
            let hi1 = pieces.iter().map(|p| p.hi[1]).fold(f64::NEG_INFINITY, f64::max);
            candidates.push(vec![((hi0 - lo0).max(hi1 - lo1).max(1.0), 1)]);
        }
        GroupCovers { dp, candidates }
    }

    fn value(&self, scale: f64, rho: f64) -> f64 {
        let mut best = self
            .candidates
            .iter()
            .map(|c| cover_value(c, scale, rho))
            .fold(f64::INFINITY, f64::min);
        if let Some(iv) = &self.dp {
            best = best.min(dp_cover(iv, scale, rho));
        }
        best
    }
}

/// Aligned cells `[k s, (k+1) s)` for dyadic `s ≤ scale`.
fn grid_covers_1d(iv: &[(f64, f64)], scale: f64) -> Vec<SideList> {
    let mut out = Vec::new();
    let mut s = 1.0;
    while s <= scale {
        let mut cells: Vec<i64> = Vec::new();
        let mut budget = 4_000_000usize;
        for &(a, b) in iv {
            let (ka, kb) = ((a / s).floor() as i64, (b / s).floor() as i64);
            let span = (kb - ka + 1) as usize;
            if span > budget {
                budget = 0;
                break;
            }
            budget -= span;
            cells.extend(ka..=kb);
        }
        if budget > 0 {
            cells.sort_unstable();
            cells.dedup();
            out.push(vec![(s, cells.len() as u64)]);
        }
        s *= 2.0;
    }
    out
}

fn grid_covers_2d(pieces: &[Piece], scale: f64) -> Vec<SideList> {
    let mut out = Vec::new();
    let mut s = 1.0;
    while s <= scale {
        let mut cells: HashSet<(i64, i64)> = HashSet::new();
        let mut ok = true;
        for p in pieces {
            let (x0, x1) = ((p.lo[0] / s).floor() as i64, (p.hi[0] / s).floor() as i64);
            let (y0, y1) = ((p.lo[1] / s).floor() as i64, (p.hi[1] / s).floor() as i64);
            if (x1 - x0 + 1) * (y1 - y0 + 1) > 1_000_000 || cells.len() > 4_000_000 {
                ok = false;
                break;
            }
            for i in x0..=x1 {
                for j in y0..=y1 {
                    cells.insert((i, j));
                }
            }
        }
        if ok {
            out.push(vec![(s, cells.len() as u64)]);
        }
        s *= 2.0;
    }
    out
}

/// Optimal cover of sorted 1-D pieces by boxes each spanning a contiguous
/// run of pieces.
fn dp_cover(iv: &[(f64, f64)], scale: f64, rho: f64) -> f64 {
    let n = iv.len();
    let mut best = vec![0.0f64; n + 1];
    for i in 1..=n {
        let mut b = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in (0..i).rev() {
            hi = hi.max(iv[j].1);
            let c = ((hi - iv[j].0).max(1.0) / scale).powf(rho);
            if c >= b {
                break;
            }
            b = b.min(best[j] + c);
        }
        best[i] = b;
    }
    best[n]
}

/// Cover data for all groups of one shell.
struct ShellCovers {
    scale: f64,
    groups: Vec<GroupCovers>,
}

impl ShellCovers {
    fn build(e: &ShellSet, n: usize) -> Self {
        let scale = shell_bound(n);
        let groups = e
            .shell_pieces(n)
            .iter()
            .map(|g| GroupCovers::build(g, e.dim, scale))
            .collect();
        ShellCovers { scale, groups }
    }

    fn value(&self, rho: f64) -> f64 {
        self.groups.iter().map(|g| g.value(self.scale, rho)).sum()
    }

    fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// `ν_ρⁿ(E)` over the canonical cover family.
pub fn nu_rho(e: &ShellSet, n: usize, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Parameter(format!("rho must be positive, got {rho}")));
    }
    Ok(ShellCovers::build(e, n).value(rho))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub rho: f64,
    /// `(n, ν_ρⁿ)` for `n = 0..=n_max`.
    pub per_shell: Vec<(usize, f64)>,
    pub partial_sums: Vec<f64>,
    /// Sum over the last block of shells divided by the sum over the block
    /// before it.
    pub block_ratio: f64,
    /// Last-block increment relative to the full partial sum.
    pub tail_fraction: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimEstimate {
    pub estimate: f64,
    pub n_max: usize,
    pub block_len: usize,
    pub tau_sat: f64,
    /// No element lies in the last block of shells.
    pub bounded: bool,
    /// No grid ρ saturated; the estimate is the largest grid value.
    pub unresolved: bool,
    pub low_confidence: bool,
    pub reports: Vec<CoverReport>,
}

/// Smallest grid ρ whose shell sums saturate, with saturation tolerance
/// [`TAU_SAT`].
pub fn dim_estimate(e: &ShellSet, rho_grid: &[f64], n_max: usize) -> Result<DimEstimate> {
    dim_estimate_with(e, rho_grid, n_max, TAU_SAT)
}

/// Saturation test: with `b = ⌈n_max/3⌉`, the partial sums saturate when the
/// sum over shells `n_max−b+1..=n_max` is below `(1 − τ)` times the sum over
/// the preceding `b` shells, i.e. the shell values decay geometrically at
/// the end of the table.
pub fn dim_estimate_with(e: &ShellSet, rho_grid: &[f64], n_max: usize, tau: f64) -> Result<DimEstimate> {
    if rho_grid.is_empty() {
        return Err(Error::Parameter("rho grid is empty".into()));
    }
    if rho_grid.iter().any(|r| !(*r > 0.0 && r.is_finite())) || rho_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Parameter("rho grid must be positive and strictly increasing".into()));
    }
    if n_max == 0 {
        return Err(Error::Parameter("n_max must be >= 1".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Parameter(format!("tau_sat must lie in (0, 1), got {tau}")));
    }
    let shells: Vec<ShellCovers> = (0..=n_max).map(|n| ShellCovers::build(e, n)).collect();
    let b = n_max.div_ceil(3);
    let tail_start = n_max + 1 - b;
    let prev_start = tail_start.saturating_sub(b);
    let bounded = shells[tail_start..].iter().all(ShellCovers::is_empty);

    let mut reports = Vec::with_capacity(rho_grid.len());
    for &rho in rho_grid {
        let per_shell: Vec<(usize, f64)> = shells.iter().enumerate().map(|(n, s)| (n, s.value(rho))).collect();
        let partial_sums: Vec<f64> = per_shell
            .iter()
            .scan(0.0, |acc, (_, v)| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        let tail: f64 = per_shell[tail_start..].iter().map(|p| p.1).sum();
        let prev: f64 = per_shell[prev_start..tail_start].iter().map(|p| p.1).sum();
        let total = *partial_sums.last().unwrap();
        let block_ratio = if prev > 0.0 {
            tail / prev
        } else if tail > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        reports.push(CoverReport {
            rho,
            per_shell,
            partial_sums,
            block_ratio,
            tail_fraction: if total > 0.0 { tail / total } else { 0.0 },
            saturated: tail == 0.0 || block_ratio < 1.0 - tau,
        });
    }
    let (estimate, unresolved) = if bounded {
        (0.0, false)
    } else {
        match reports.iter().find(|r| r.saturated) {
            Some(r) => (r.rho, false),
            None => (*rho_grid.last().unwrap(), true),
        }
    };
    Ok(DimEstimate {
        estimate,
        n_max,
        block_len: b,
        tau_sat: tau,
        bounded,
        unresolved,
        low_confidence: n_max < 4,
        reports,
    })
}

/// Writes `rho,n,nu,partial_sum` rows.
pub fn write_partial_sums_csv<W: Write>(d: &DimEstimate, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rho", "n", "nu", "partial_sum"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for r in &d.reports {
        for ((n, v), s) in r.per_shell.iter().zip(&r.partial_sums) {
            out.write_record([r.rho.to_string(), n.to_string(), v.to_string(), s.to_string()])
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevelRule {
    /// `u(t,x) ≥ e^{βt}`.
    Exponential { beta: f64 },
    /// `u(t,x) ≥ level`.
    Constant { level: f64 },
}

impl LevelRule {
    pub fn threshold(&self, t: f64) -> f64 {
        match *self {
            LevelRule::Exponential { beta } => (beta * t).exp(),
            LevelRule::Constant { level } => level,
        }
    }
}

/// Space-time points `(e^{t/ϑ}, x)` of all snapshots where `u` reaches the
/// rule's threshold, pooled over the ensemble.
pub fn peak_set_extract(trajs: &[Trajectory], rule: &LevelRule, theta: f64) -> Result<ShellSet> {
    if !(theta > 0.0) {
        return Err(Error::Parameter(format!("theta must be positive, got {theta}")));
    }
    let Some(first) = trajs.first() else {
        return Ok(ShellSet::points_2d(Vec::new()));
    };
    let times: Vec<f64> = first.snapshots.iter().map(|s| s.0).collect();
    let grid = first.snapshots.first().map(|s| *s.1.grid());
    let mut seen: HashSet<(u64, u64)> = HashSet::new();
    let mut pts = Vec::new();
    for (r, tr) in trajs.iter().enumerate() {
        if tr.snapshots.len() != times.len()
            || tr.snapshots.iter().zip(&times).any(|(s, t)| s.0 != *t || Some(*s.1.grid()) != grid)
        {
            return Err(Error::Aggregation(format!("replica {r} has a different space-time grid")));
        }
        for (t, f) in &tr.snapshots {
            let level = rule.threshold(*t);
            let tx = (t / theta).exp();
            for (x, &u) in f.grid().sites().zip(f.values()) {
                if u >= level && seen.insert((tx.to_bits(), x.to_bits())) {
                    pts.push([tx, x]);
                }
            }
        }
    }
    Ok(ShellSet::points_2d(pts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    #[test]
    fn shell_indices() {
        assert_eq!(coordinate_shell(0.0), 0);
        assert_eq!(coordinate_shell(1.0), 0);
        assert_eq!(coordinate_shell(-1.0), 1);
        assert_eq!(coordinate_shell(2.0), 1);
        for n in 0..15 {
            assert_eq!(coordinate_shell((n as f64).exp()), n);
        }
        assert_eq!(ShellSet::shell_of([0.5, 3.0], 2), 2);
    }

    #[test]
    fn single_point_and_empty_shell() {
        let e = ShellSet::points_1d([2.0]);
        assert!((nu_rho(&e, 1, 1.0).unwrap() - 0.367_879_4).abs() < 1e-7);
        assert!((nu_rho(&e, 1, 2.5).unwrap() - E.powf(-2.5)).abs() < 1e-12);
        assert_eq!(nu_rho(&e, 0, 1.0).unwrap(), 0.0);
        assert_eq!(nu_rho(&e, 3, 1.0).unwrap(), 0.0);
        assert!(nu_rho(&e, 1, 0.0).is_err());
    }

    #[test]
    fn integer_run_in_shell_two() {
        // {3,4}, {5,6}, {7}: boxes of side just above 1 cover unit-spaced pairs
        let e = ShellSet::points_1d((3..=7).map(f64::from));
        let v = nu_rho(&e, 2, 1.0).unwrap();
        assert!((v - 3.0 / (E * E)).abs() < 1e-12, "{v}");
        // five unit boxes and the single box of side 4 are both worse
        assert!(v < 4.0 / (E * E));
    }

    #[test]
    fn csv_ingest() {
        let s = ShellSet::from_csv("x,y\n1.5,2\n-3,4\n".as_bytes()).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.len(), 2);
        let s = ShellSet::from_csv("0.5\n7\n".as_bytes()).unwrap();
        assert_eq!(s.dim(), 1);
        assert!(ShellSet::from_csv("1,2\n3\n".as_bytes()).is_err());
    }

    #[test]
    fn intervals_clip_to_shells() {
        let e = ShellSet::new(1, vec![Element::Interval { lo: 0.5, hi: 20.0 }]).unwrap();
        // shell 2 ∩ [0.5, 20] = (e, e²], one box of side e² − e
        let v = nu_rho(&e, 2, 1.0).unwrap();
        assert!((v - (E * E - E) / (E * E)).abs() < 1e-12);
        assert!(ShellSet::new(2, vec![Element::Interval { lo: 0.0, hi: 1.0 }]).is_err());
    }

    #[test]
    fn finite_set_has_dim_zero() {
        let e = ShellSet::points_1d([0.5, 3.0, 10.0, -40.0]);
        let d = dim_estimate(&e, &[0.5, 1.0, 1.5], 12).unwrap();
        assert_eq!(d.estimate, 0.0);
        assert!(d.bounded);
    }

    #[test]
    fn low_confidence_flag() {
        let e = ShellSet::points_1d((1..40).map(f64::from));
        let d = dim_estimate(&e, &[1.0], 3).unwrap();
        assert!(d.low_confidence);
        assert!(dim_estimate(&e, &[1.0, 0.5], 6).is_err());
    }

    #[test]
    fn two_dimensional_grid_cells() {
        // a 4×4 block of unit-spaced points inside shell 2
        let pts: Vec<[f64; 2]> = (0..4)
            .flat_map(|i| (0..4).map(move |j| [3.0 + i as f64, 3.0 + j as f64]))
            .collect();
        let e = ShellSet::points_2d(pts);
        let v = nu_rho(&e, 2, 2.0).unwrap();
        // bounding box of side 3 beats sixteen unit cells
        assert!((v - 9.0 / E.powi(4)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn level_rules() {
        assert_eq!(LevelRule::Constant { level: 2.0 }.threshold(5.0), 2.0);
        assert!((LevelRule::Exponential { beta: 0.5 }.threshold(2.0) - E).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn nu_nonincreasing_in_rho(xs in proptest::collection::vec(1.0f64..60.0, 1..40), r1 in 0.1f64..3.0, r2 in 0.1f64..3.0) {
            let e = ShellSet::points_1d(xs);
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            for n in 0..6 {
                prop_assert!(nu_rho(&e, n, hi).unwrap() <= nu_rho(&e, n, lo).unwrap() + 1e-12);
            }
        }

        #[test]
        fn nu_monotone_in_set(xs in proptest::collection::vec(-60.0f64..60.0, 1..40), keep in proptest::collection::vec(any::<bool>(), 40), rho in 0.2f64..2.5) {
            let sub: Vec<f64> = xs.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect();
            let e = ShellSet::points_1d(sub);
            let f = ShellSet::points_1d(xs);
            for n in 0..6 {
                prop_assert!(nu_rho(&e, n, rho).unwrap() <= nu_rho(&f, n, rho).unwrap() + 1e-12);
            }
        }
    }
}
