//! Backward functions, forward smoothing kernels, filters and smoothing
//! marginals on a grid, plus the Gaussian-AR closed forms and a scalar Kalman
//! filter used as an independent oracle.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{log_sum_exp, Grid, KernelMatrix, ProbVector};
use crate::model::{GaussianARParams, ModelSpec};

/// Linear sums below this are recomputed in log space.
const UNDERFLOW: f64 = 1e-250;

/// Log of `sum_j K(i, j) exp(lw_j)` for every row `i`. Computed linearly with
/// a max shift; rows that underflow fall back to log-sum-exp over the
/// kernel's log entries.
fn log_apply(k: &KernelMatrix, lw: &[f64]) -> Vec<f64> {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![f64::NEG_INFINITY; k.size()];
    }
    let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    (0..k.size())
        .into_par_iter()
        .map(|i| {
            if !k.is_valid(i) {
                return f64::NEG_INFINITY;
            }
            let s: f64 = k.row(i).iter().zip(&w).map(|(a, b)| a * b).sum();
            if s > UNDERFLOW {
                s.ln() + max
            } else {
                let terms: Vec<f64> = k.log_row(i).iter().zip(lw).map(|(a, b)| a + b).collect();
                log_sum_exp(&terms)
            }
        })
        .collect()
}

fn normalize_max(v: &mut [f64]) -> bool {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x -= max);
    true
}

/// Runs the backward recursion `beta_k = Q (g_{k+1} beta_{k+1})` from
/// `beta_n = 1`. Each returned vector holds `log beta_k` shifted to max 0;
/// index `k` of the result is `beta_{k|n}`.
pub fn backward_recursion(q: &KernelMatrix, log_g: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = log_g.len() - 1;
    let size = q.size();
    let mut out = vec![Vec::new(); n + 1];
    out[n] = vec![0.0; size];
    for k in (0..n).rev() {
        let lw: Vec<f64> = log_g[k + 1].iter().zip(&out[k + 1]).map(|(a, b)| a + b).collect();
        let mut b = log_apply(q, &lw);
        if !normalize_max(&mut b) {
            return Err(Error::ImpossibleRecord { index: k });
        }
        out[k] = b;
    }
    Ok(out)
}

/// `F(x, x') ∝ Q(x, x') g(x', y_{k+1}) beta_{k+1}(x')`, row-normalized; rows
/// with zero mass are the zero measure.
pub fn forward_kernel_from(q: &KernelMatrix, log_g_next: &[f64], log_beta_next: &[f64]) -> Result<KernelMatrix> {
    let size = q.size();
    let lw: Vec<f64> = log_g_next.iter().zip(log_beta_next).map(|(a, b)| a + b).collect();
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut rows = vec![0.0; size * size];
    if max.is_finite() {
        let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
        rows.par_chunks_mut(size).enumerate().for_each(|(i, row)| {
            if !q.is_valid(i) {
                return;
            }
            let qi = q.row(i);
            let mut s = 0.0;
            for j in 0..size {
                let v = qi[j] * w[j];
                row[j] = v;
                s += v;
            }
            if s > UNDERFLOW {
                return;
            }
            let mut logs: Vec<f64> = q.log_row(i).iter().zip(&lw).map(|(a, b)| a + b).collect();
            let lse = log_sum_exp(&logs);
            if lse.is_finite() {
                for (r, l) in row.iter_mut().zip(logs.iter_mut()) {
                    *r = (*l - lse).exp();
                }
            } else {
                row.iter_mut().for_each(|r| *r = 0.0);
            }
        });
    }
    KernelMatrix::from_rows(size, rows)
}

/// Backward functions and forward smoothing kernels for one observation
/// record `y_{0:n}` on a grid. Kernels are built on demand.
#[derive(Debug, Clone)]
pub struct SmoothingPipeline {
    model: ModelSpec,
    grid: Arc<Grid>,
    q: Arc<KernelMatrix>,
    observations: Vec<f64>,
    log_g: Vec<Vec<f64>>,
    log_beta: Vec<Vec<f64>>,
}

impl SmoothingPipeline {
    pub fn new(model: &ModelSpec, grid: Arc<Grid>, observations: Vec<f64>) -> Result<Self> {
        let q = Arc::new(model.discretize_kernel(&grid)?);
        Self::with_kernel(model, grid, q, observations)
    }

    /// Reuses an already discretized transition kernel.
    pub fn with_kernel(model: &ModelSpec, grid: Arc<Grid>, q: Arc<KernelMatrix>, observations: Vec<f64>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::param("observations", "need at least y_0"));
        }
        if q.size() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: q.size(),
            });
        }
        let log_g: Vec<Vec<f64>> = observations
            .iter()
            .map(|&y| model.observation_log_weights(&grid, y))
            .collect();
        if let Some((k, _)) = log_g.iter().enumerate().find(|(_, v)| v.iter().any(|l| l.is_nan())) {
            return Err(Error::NonFinite {
                x: f64::NAN,
                y: observations[k],
            });
        }
        let log_beta = backward_recursion(&q, &log_g)?;
        Ok(SmoothingPipeline {
            model: model.clone(),
            grid,
            q,
            observations,
            log_g,
            log_beta,
        })
    }

    /// Horizon `n` (the record is `y_0..y_n`).
    pub fn n(&self) -> usize {
        self.observations.len() - 1
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn transition(&self) -> &Arc<KernelMatrix> {
        &self.q
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn log_observation(&self, k: usize) -> &[f64] {
        &self.log_g[k]
    }

    /// `log beta_{k|n}` up to an additive constant (max 0); zero beyond `n`.
    pub fn log_backward(&self, k: usize) -> Vec<f64> {
        if k >= self.n() {
            vec![0.0; self.grid.len()]
        } else {
            self.log_beta[k].clone()
        }
    }

    pub fn log_backward_all(&self) -> &[Vec<f64>] {
        &self.log_beta
    }

    /// `F_{k|n}`; for `k >= n` this is the discretized transition.
    pub fn forward_kernel(&self, k: usize) -> Result<KernelMatrix> {
        if k >= self.n() {
            return Ok((*self.q).clone());
        }
        forward_kernel_from(&self.q, &self.log_g[k + 1], &self.log_beta[k + 1])
    }

    /// `F_{start} F_{start+1} ... F_{start+steps-1}`: the chain moved from
    /// index `start` forward by `steps`.
    pub fn multi_step(&self, start: usize, steps: usize) -> Result<KernelMatrix> {
        if steps == 0 {
            return Err(Error::param("m", "skeleton length must be >= 1"));
        }
        let mut acc = self.forward_kernel(start)?;
        for t in 1..steps {
            acc = acc.then(&self.forward_kernel(start + t)?)?;
        }
        Ok(acc)
    }

    /// The `m`-skeleton `F_{k,m|n}`, covering indices `km .. km+m-1`.
    pub fn skeleton(&self, k: usize, m: usize) -> Result<KernelMatrix> {
        self.multi_step(k * m, m)
    }

    /// Filters `phi_{xi,0..=n}` by the predict/update recursion.
    pub fn filters(&self, xi: &ProbVector) -> Result<Vec<ProbVector>> {
        self.filters_until(xi, self.n())
    }

    fn filters_until(&self, xi: &ProbVector, last: usize) -> Result<Vec<ProbVector>> {
        xi.grid().check_same(&self.grid)?;
        let mut out = Vec::with_capacity(last + 1);
        let mut logs: Vec<f64> = xi.log_weights().iter().zip(&self.log_g[0]).map(|(a, b)| a + b).collect();
        for k in 0..=last {
            if k > 0 {
                let prev = out.last().map(ProbVector::probs).expect("previous filter");
                let pred = self.q.push_forward(&prev);
                logs = pred.iter().zip(&self.log_g[k]).map(|(p, g)| p.ln() + g).collect();
            }
            let v = ProbVector::from_log_unnormalized(self.grid.clone(), logs.clone())
                .map_err(|_| Error::ImpossibleRecord { index: k })?;
            out.push(v);
        }
        Ok(out)
    }

    pub fn filter_distribution(&self, xi: &ProbVector, k: usize) -> Result<ProbVector> {
        if k > self.n() {
            return Err(Error::param("k", "filter index beyond the record"));
        }
        Ok(self.filters_until(xi, k)?.pop().expect("non-empty"))
    }

    /// `phi_{xi,k|n} ∝ phi_{xi,k} beta_{k|n}`.
    pub fn smoothing_marginal(&self, xi: &ProbVector, k: usize) -> Result<ProbVector> {
        let f = self.filter_distribution(xi, k)?;
        self.reweight(&f, k)
    }

    /// All smoothing marginals `phi_{xi,k|n}`, `k = 0..=n`.
    pub fn smoothing_marginals(&self, xi: &ProbVector) -> Result<Vec<ProbVector>> {
        self.filters(xi)?
            .iter()
            .enumerate()
            .map(|(k, f)| self.reweight(f, k))
            .collect()
    }

    fn reweight(&self, filter: &ProbVector, k: usize) -> Result<ProbVector> {
        let logs = filter.log_weights().iter().zip(&self.log_beta[k]).map(|(a, b)| a + b).collect();
        ProbVector::from_log_unnormalized(self.grid.clone(), logs).map_err(|_| Error::ZeroMass { index: k })
    }

    /// The forward-decomposition route: `phi_{xi,0|n} F_{0|n} ... F_{k-1|n}`.
    pub fn smoothing_marginal_forward(&self, xi: &ProbVector, k: usize) -> Result<ProbVector> {
        let mut p = self.smoothing_marginal(xi, 0)?.probs();
        for t in 0..k {
            p = self.forward_kernel(t)?.push_forward(&p);
        }
        ProbVector::from_weights(self.grid.clone(), &p)
    }
}

/// Backward parameters `m_{k|n}`, `rho^2_{k|n}` for `k = 0..n-1` (index `k`),
/// with the observation record they were built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBackwardParams {
    pub m: Vec<f64>,
    pub rho2: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn gaussian_backward_params(p: &GaussianARParams, y: &[f64]) -> Result<GaussianBackwardParams> {
    if y.len() < 2 {
        return Err(Error::param("n", "need n >= 1"));
    }
    let n = y.len() - 1;
    let (a2, s2, t2) = (p.alpha * p.alpha, p.sigma * p.sigma, p.tau * p.tau);
    let mut m = vec![0.0; n];
    let mut rho2 = vec![0.0; n];
    m[n - 1] = y[n];
    rho2[n - 1] = s2 + t2;
    for k in (0..n - 1).rev() {
        let r = rho2[k + 1];
        let den = r + a2 * t2;
        m[k] = (r * y[k + 1] + p.alpha * t2 * m[k + 1]) / den;
        rho2[k] = ((t2 + s2) * r + a2 * s2 * t2) / den;
    }
    Ok(GaussianBackwardParams { m, rho2, y: y.to_vec() })
}

impl GaussianBackwardParams {
    pub fn n(&self) -> usize {
        self.y.len() - 1
    }

    /// `log beta_{k|n}(x)` up to a constant; `0` for `k >= n`.
    pub fn log_backward(&self, k: usize, x: f64, alpha: f64) -> f64 {
        if k >= self.n() {
            return 0.0;
        }
        -(alpha * x - self.m[k]).powi(2) / (2.0 * self.rho2[k])
    }
}

/// Mean `mu_{k|n}(x)` and variance `gamma^2_{k|n}` of `F_{k|n}(x, ·)`. At
/// `k = n-1` the next backward function is constant, which is the
/// `rho^2 -> inf` limit of the general formula.
pub fn gaussian_forward_params(p: &GaussianARParams, b: &GaussianBackwardParams, k: usize, x: f64) -> (f64, f64) {
    let (slope, intercept, gamma2) = gaussian_forward_affine(p, b, k);
    (slope * x + intercept, gamma2)
}

/// `(slope, intercept, gamma^2)` with `mu_{k|n}(x) = slope x + intercept`.
pub fn gaussian_forward_affine(p: &GaussianARParams, b: &GaussianBackwardParams, k: usize) -> (f64, f64, f64) {
    let (a, s2, t2) = (p.alpha, p.sigma * p.sigma, p.tau * p.tau);
    let n = b.n();
    assert!(k < n, "forward parameters need k <= n-1");
    let y = b.y[k + 1];
    if k + 1 == n {
        let den = s2 + t2;
        return (t2 * a / den, s2 * y / den, s2 * t2 / den);
    }
    let r = b.rho2[k + 1];
    let m = b.m[k + 1];
    let den = (s2 + t2) * r + a * a * s2 * t2;
    (t2 * r * a / den, (s2 * r * y + s2 * t2 * a * m) / den, s2 * t2 * r / den)
}

/// Scalar Kalman filter; returns the filtered `(mean, variance)` for
/// `k = 0..=n`.
pub fn kalman_oracle(p: &GaussianARParams, prior_mean: f64, prior_var: f64, y: &[f64]) -> Vec<(f64, f64)> {
    let (s2, t2) = (p.sigma * p.sigma, p.tau * p.tau);
    let mut m = prior_mean;
    let mut v = prior_var;
    let mut out = Vec::with_capacity(y.len());
    for (k, &yk) in y.iter().enumerate() {
        if k > 0 {
            m *= p.alpha;
            v = p.alpha * p.alpha * v + s2;
        }
        let gain = v / (v + t2);
        m += gain * (yk - m);
        v *= 1.0 - gain;
        out.push((m, v));
    }
    out
}
