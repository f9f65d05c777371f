//! Uniform 1-D grids, log-space probability vectors and row-stochastic kernels.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row entries below this fraction of the row maximum are outside the row's
/// support window. Dropped mass is bounded by `len * WINDOW_FLOOR`.
pub const WINDOW_FLOOR: f64 = 1e-18;

/// Pre-normalization row mass under which a coverage warning is raised.
pub const COVERAGE_WARNING: f64 = 0.999;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    lo: f64,
    hi: f64,
    step: f64,
    wraparound: bool,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.points.len() == other.points.len()
            && self.lo == other.lo
            && self.hi == other.hi
            && self.wraparound == other.wraparound
    }
}

/// Builds a uniform grid on `[lo, hi]`. With `wraparound` the endpoint `hi` is
/// identified with `lo` and excluded.
pub fn build_grid(lo: f64, hi: f64, count: usize, wraparound: bool) -> Result<Grid> {
    if count < 2 {
        return Err(Error::GridTooSmall(count));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidRange { lo, hi });
    }
    let step = if wraparound {
        (hi - lo) / count as f64
    } else {
        (hi - lo) / (count - 1) as f64
    };
    let points = (0..count)
        .map(|i| {
            if !wraparound && i == count - 1 {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect();
    Ok(Grid {
        points,
        lo,
        hi,
        step,
        wraparound,
    })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn is_wraparound(&self) -> bool {
        self.wraparound
    }

    pub fn period(&self) -> f64 {
        self.hi - self.lo
    }

    /// Signed displacement from `a` to `b`; on a wraparound grid it is reduced
    /// to `[-period/2, period/2)`.
    pub fn displacement(&self, a: f64, b: f64) -> f64 {
        let d = b - a;
        if self.wraparound {
            wrap_centered(d, self.period())
        } else {
            d
        }
    }

    pub fn distance(&self, a: f64, b: f64) -> f64 {
        self.displacement(a, b).abs()
    }

    pub fn nearest_index(&self, x: f64) -> usize {
        let n = self.len();
        if self.wraparound {
            let t = (x - self.lo).rem_euclid(self.period()) / self.step;
            (t.round() as usize) % n
        } else {
            let t = ((x - self.lo) / self.step).round();
            t.clamp(0.0, (n - 1) as f64) as usize
        }
    }

    pub fn mask(&self, pred: impl Fn(f64) -> bool) -> Vec<bool> {
        self.points.iter().map(|&x| pred(x)).collect()
    }

    /// Mask of the interval `[a, b]` (inclusive, small slack for rounding).
    pub fn interval_mask(&self, a: f64, b: f64) -> Vec<bool> {
        let eps = 1e-9 * self.step;
        self.mask(|x| x >= a - eps && x <= b + eps)
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

pub(crate) fn wrap_centered(d: f64, period: f64) -> f64 {
    let r = (d + period / 2.0).rem_euclid(period);
    r - period / 2.0
}

/// Reduces an angle to `[0, 2π)`.
pub fn wrap_angle(x: f64) -> f64 {
    x.rem_euclid(2.0 * PI)
}

/// `log(sum(exp(v)))` with the usual max shift; `-inf` for an empty or
/// all-`-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// A normalized distribution on a grid, stored as log-weights.
#[derive(Debug, Clone)]
pub struct ProbVector {
    grid: Arc<Grid>,
    log_weights: Vec<f64>,
    log_norm: f64,
}

impl ProbVector {
    /// Normalizes unnormalized log-weights. `log_norm` keeps the log of the
    /// removed constant.
    pub fn from_log_unnormalized(grid: Arc<Grid>, mut log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: log_weights.len(),
            });
        }
        let log_norm = log_sum_exp(&log_weights);
        if !log_norm.is_finite() {
            return Err(Error::ZeroMass { index: 0 });
        }
        for w in &mut log_weights {
            *w -= log_norm;
        }
        Ok(ProbVector {
            grid,
            log_weights,
            log_norm,
        })
    }

    pub fn from_weights(grid: Arc<Grid>, weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::param("weights", "must be finite and non-negative"));
        }
        let logs = weights.iter().map(|w| w.ln()).collect();
        Self::from_log_unnormalized(grid, logs)
    }

    pub fn point_mass(grid: Arc<Grid>, index: usize) -> Result<Self> {
        if index >= grid.len() {
            return Err(Error::param("index", "outside the grid"));
        }
        let mut logs = vec![f64::NEG_INFINITY; grid.len()];
        logs[index] = 0.0;
        Self::from_log_unnormalized(grid, logs)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn mean(&self) -> f64 {
        self.grid
            .points()
            .iter()
            .zip(&self.log_weights)
            .map(|(x, w)| x * w.exp())
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.grid
            .points()
            .iter()
            .zip(&self.log_weights)
            .map(|(x, w)| (x - m).powi(2) * w.exp())
            .sum()
    }

    /// Mass of the grid points selected by `mask`.
    pub fn mass_on(&self, mask: &[bool]) -> f64 {
        self.log_weights
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(w, _)| w.exp())
            .sum()
    }
}

pub fn tv_distance(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    p.grid.check_same(&q.grid)?;
    Ok(tv_slices(&p.probs(), &q.probs()))
}

pub fn overlap_mass(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    p.grid.check_same(&q.grid)?;
    Ok(overlap_slices(&p.probs(), &q.probs()))
}

/// Half the L1 distance, computed as `1 - sum(min)` so that it is exactly the
/// complement of [`overlap_slices`].
pub fn tv_slices(p: &[f64], q: &[f64]) -> f64 {
    let half_l1: f64 = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    half_l1.clamp(0.0, 1.0)
}

pub fn overlap_slices(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| a.min(*b))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// A row-stochastic matrix on a grid. Invalid rows are the zero measure.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    size: usize,
    probs: Vec<f64>,
    log_probs: Option<Vec<f64>>,
    valid: Vec<bool>,
    coverage: Vec<f64>,
    windows: Vec<(usize, usize)>,
}

impl KernelMatrix {
    /// Builds a kernel from per-row unnormalized log-densities (row-major,
    /// `size * size`). Rows that are entirely `-inf` become invalid rows.
    /// `coverage` holds the pre-normalization row masses (use 1 when unknown).
    pub fn from_log_rows(
        size: usize,
        mut log_rows: Vec<f64>,
        coverage: Vec<f64>,
        keep_logs: bool,
    ) -> Result<Self> {
        if log_rows.len() != size * size || coverage.len() != size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                got: log_rows.len(),
            });
        }
        let mut probs = vec![0.0; size * size];
        let mut valid = vec![false; size];
        probs
            .par_chunks_mut(size)
            .zip(log_rows.par_chunks_mut(size))
            .zip(valid.par_iter_mut())
            .for_each(|((row, lrow), ok)| {
                let lse = log_sum_exp(lrow);
                if lse.is_finite() {
                    *ok = true;
                    for (p, l) in row.iter_mut().zip(lrow.iter_mut()) {
                        *l -= lse;
                        *p = l.exp();
                    }
                } else {
                    lrow.iter_mut().for_each(|l| *l = f64::NEG_INFINITY);
                }
            });
        let mut k = KernelMatrix {
            size,
            probs,
            log_probs: keep_logs.then_some(log_rows),
            valid,
            coverage,
            windows: Vec::new(),
        };
        k.compute_windows();
        Ok(k)
    }

    /// Builds a kernel from linear rows, normalizing each row; all-zero rows
    /// are invalid.
    pub fn from_rows(size: usize, mut probs: Vec<f64>) -> Result<Self> {
        if probs.len() != size * size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                got: probs.len(),
            });
        }
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::param("kernel", "entries must be finite and non-negative"));
        }
        let mut valid = vec![false; size];
        for (row, ok) in probs.chunks_mut(size).zip(valid.iter_mut()) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                *ok = true;
                row.iter_mut().for_each(|p| *p /= s);
            }
        }
        let mut k = KernelMatrix {
            size,
            probs,
            log_probs: None,
            valid,
            coverage: vec![1.0; size],
            windows: Vec::new(),
        };
        k.compute_windows();
        Ok(k)
    }

    fn compute_windows(&mut self) {
        let size = self.size;
        self.windows = self
            .probs
            .par_chunks(size)
            .map(|row| {
                let max = row.iter().copied().fold(0.0, f64::max);
                if max <= 0.0 {
                    return (0, 0);
                }
                let floor = max * WINDOW_FLOOR;
                let first = row.iter().position(|p| *p > floor).unwrap_or(0);
                let last = row.iter().rposition(|p| *p > floor).unwrap_or(0);
                (first, last + 1)
            })
            .collect();
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.size..(i + 1) * self.size]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.size + j]
    }

    /// Natural log of row `i`; exact logs are kept for discretized base
    /// kernels so that far tails do not underflow.
    pub fn log_row(&self, i: usize) -> Vec<f64> {
        match &self.log_probs {
            Some(l) => l[i * self.size..(i + 1) * self.size].to_vec(),
            None => self.row(i).iter().map(|p| p.ln()).collect(),
        }
    }

    pub fn log_entry(&self, i: usize, j: usize) -> f64 {
        match &self.log_probs {
            Some(l) => l[i * self.size + j],
            None => self.entry(i, j).ln(),
        }
    }

    pub fn has_exact_logs(&self) -> bool {
        self.log_probs.is_some()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Half-open support window `[first, last)` of row `i`.
    pub fn window(&self, i: usize) -> (usize, usize) {
        self.windows[i]
    }

    pub fn coverage(&self) -> &[f64] {
        &self.coverage
    }

    pub fn min_coverage(&self) -> f64 {
        self.coverage.iter().copied().fold(1.0, f64::min)
    }

    pub fn coverage_warning(&self) -> bool {
        self.min_coverage() < COVERAGE_WARNING
    }

    /// Overlap mass `sum_j min(K(i,j), K(i',j))` restricted to the
    /// intersection of the two support windows.
    pub fn row_overlap(&self, i: usize, j: usize) -> f64 {
        if !self.valid[i] || !self.valid[j] {
            return 0.0;
        }
        let (a0, a1) = self.windows[i];
        let (b0, b1) = self.windows[j];
        let lo = a0.max(b0);
        let hi = a1.min(b1);
        if lo >= hi {
            return 0.0;
        }
        let ri = self.row(i);
        let rj = self.row(j);
        let s: f64 = (lo..hi).map(|t| ri[t].min(rj[t])).sum();
        s.min(1.0)
    }

    /// Mean and variance of each row against `points`; `None` for invalid rows.
    pub fn row_moments(&self, points: &[f64]) -> Vec<Option<(f64, f64)>> {
        (0..self.size)
            .into_par_iter()
            .map(|i| {
                if !self.valid[i] {
                    return None;
                }
                let (a, b) = self.windows[i];
                let row = self.row(i);
                let mass: f64 = row[a..b].iter().sum();
                let mean: f64 = (a..b).map(|t| row[t] * points[t]).sum::<f64>() / mass;
                let var: f64 =
                    (a..b).map(|t| row[t] * (points[t] - mean).powi(2)).sum::<f64>() / mass;
                Some((mean, var))
            })
            .collect()
    }

    /// Kernel composition: first `self`, then `next` (matrix product
    /// `self * next`). Each output row is summed in a fixed order.
    pub fn then(&self, next: &KernelMatrix) -> Result<KernelMatrix> {
        if self.size != next.size {
            return Err(Error::DimensionMismatch {
                expected: self.size,
                got: next.size,
            });
        }
        let n = self.size;
        let mut out = vec![0.0; n * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, orow)| {
            if !self.valid[i] {
                return;
            }
            let (a, b) = self.windows[i];
            let row = self.row(i);
            for l in a..b {
                let w = row[l];
                if w == 0.0 || !next.valid[l] {
                    continue;
                }
                let (c, d) = next.windows[l];
                let nrow = next.row(l);
                for t in c..d {
                    orow[t] += w * nrow[t];
                }
            }
        });
        KernelMatrix::from_rows(n, out)
    }

    /// Measure propagation `p K`.
    pub fn push_forward(&self, p: &[f64]) -> Vec<f64> {
        let n = self.size;
        let mut out = vec![0.0; n];
        for (i, &w) in p.iter().enumerate() {
            if w == 0.0 || !self.valid[i] {
                continue;
            }
            let (a, b) = self.windows[i];
            let row = self.row(i);
            for t in a..b {
                out[t] += w * row[t];
            }
        }
        out
    }

    /// Function application `K f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.size)
            .into_par_iter()
            .map(|i| {
                if !self.valid[i] {
                    return 0.0;
                }
                let row = self.row(i);
                row.iter().zip(f).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.probs.chunks(self.size).map(|r| r.iter().sum()).collect()
    }
}

/// Discretizes a density `log_density(x, x')` on the grid: rectangle-rule
/// weighted rows renormalized to one. Rows whose pre-normalization mass is
/// below [`COVERAGE_WARNING`] are reported through the kernel's coverage.
pub fn discretize_log_density(
    grid: &Grid,
    log_density: impl Fn(f64, f64) -> f64 + Sync,
    weight_by_step: bool,
) -> Result<KernelMatrix> {
    let n = grid.len();
    let pts = grid.points();
    let log_step = if weight_by_step { grid.step().ln() } else { 0.0 };
    let mut logs = vec![0.0; n * n];
    let coverage: Vec<f64> = logs
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| {
            for (j, l) in row.iter_mut().enumerate() {
                *l = log_density(pts[i], pts[j]) + log_step;
            }
            log_sum_exp(row).exp()
        })
        .collect();
    if let Some((i, _)) = logs
        .iter()
        .enumerate()
        .find(|(_, l)| l.is_nan() || **l == f64::INFINITY)
    {
        return Err(Error::NonFinite {
            x: pts[i / n],
            y: pts[i % n],
        });
    }
    let k = KernelMatrix::from_log_rows(n, logs, coverage, true)?;
    if k.coverage_warning() {
        log::warn!(
            "kernel coverage: minimum row mass {:.6} before renormalization (grid [{}, {}] may be too narrow)",
            k.min_coverage(),
            grid.lo(),
            grid.hi()
        );
    }
    Ok(k)
}
