//! Bound computations: strong small sets, uniform accessibility, the uniform
//! product bound, bounded-noise and functional-AR constants, the Gaussian-AR
//! closed-form constants, the pairwise drift condition with `A_{m,n}`, and
//! the strongly unimodal checks.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{candidate_pairs, pair_overlap, set_coupling_constant, CouplingSetSpec, DEFAULT_PAIR_BUDGET};
use crate::error::{Error, Result};
use crate::grid::{Grid, KernelMatrix, ProbVector};
use crate::model::{FunctionalARParams, GaussianARParams, ModelFamily, ModelSpec, NoiseDensity};
use crate::smoothing::{forward_kernel_from, SmoothingPipeline};

/// Slack allowed when comparing a computed constant with its floor.
pub const FLOOR_SLACK: f64 = 1e-9;

/// Pairs scanned per index for the residual drift constant.
const RHO_PAIR_BUDGET: usize = 1024;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Total variation between `N(a, gamma^2)` and `N(a + delta, gamma^2)`:
/// `2 Phi(|delta| / (2 gamma)) - 1`.
pub fn tv_gaussians(delta: f64, gamma: f64) -> f64 {
    libm::erf(delta.abs() / (2.0 * SQRT_2 * gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallSetConstants {
    pub sigma_minus: f64,
    pub sigma_plus: f64,
    /// Normalized average of the rows over `C`.
    pub nu: Vec<f64>,
}

impl SmallSetConstants {
    pub fn ratio(&self) -> f64 {
        if self.sigma_plus.is_finite() {
            self.sigma_minus / self.sigma_plus
        } else {
            0.0
        }
    }
}

/// Sandwich constants `sigma_- nu_C <= K(x, .) <= sigma_+ nu_C` for `x` in `C`.
pub fn strong_small_constants(kernel: &KernelMatrix, mask: &[bool]) -> Result<SmallSetConstants> {
    let n = kernel.size();
    if mask.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: mask.len() });
    }
    let members: Vec<usize> = (0..n).filter(|&i| mask[i] && kernel.is_valid(i)).collect();
    if members.is_empty() {
        return Err(Error::EmptySet("strong small set C".into()));
    }
    let mut nu = vec![0.0; n];
    for &i in &members {
        for (v, r) in nu.iter_mut().zip(kernel.row(i)) {
            *v += r;
        }
    }
    let total: f64 = nu.iter().sum();
    nu.iter_mut().for_each(|v| *v /= total);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &i in &members {
        for (r, v) in kernel.row(i).iter().zip(&nu) {
            if *v > 0.0 {
                let q = r / v;
                lo = lo.min(q);
                hi = hi.max(q);
            } else if *r > 0.0 {
                hi = f64::INFINITY;
            }
        }
    }
    Ok(SmallSetConstants {
        sigma_minus: lo,
        sigma_plus: hi,
        nu,
    })
}

/// A computed constant compared against a theoretical floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorCheck {
    pub floor: f64,
    pub observed: f64,
    pub pass: bool,
}

impl FloorCheck {
    fn new(floor: f64, observed: f64) -> Self {
        FloorCheck {
            floor,
            observed,
            pass: observed >= floor - FLOOR_SLACK,
        }
    }
}

/// Checks `epsilon_{k|n}(C x C) >= sigma_- / sigma_+`.
pub fn coupling_floor_from_small_set(
    pipeline: &SmoothingPipeline,
    k: usize,
    small: &SmallSetConstants,
    mask: &[bool],
) -> Result<FloorCheck> {
    let kern = pipeline.forward_kernel(k)?;
    let set = CouplingSetSpec::Product { mask: mask.to_vec() };
    let eps = set_coupling_constant(&kern, pipeline.grid(), &set, DEFAULT_PAIR_BUDGET);
    Ok(FloorCheck::new(small.ratio(), eps))
}

/// `alpha(y_{1:l}; C)`: the infimum over endpoint pairs `(x_0, x_{l+1})` of
/// `W(x_0, x_{l+1}; C) / W(x_0, x_{l+1}; X)`, where the indicator sits on
/// `x_l`. Costs `O(N^3)` on an `N`-point grid.
pub fn accessibility_alpha(model: &ModelSpec, grid: &Grid, ys: &[f64], mask: &[bool]) -> Result<f64> {
    let q = model.discretize_kernel(grid)?;
    let log_gs: Vec<Vec<f64>> = ys.iter().map(|&y| model.observation_log_weights(grid, y)).collect();
    accessibility_alpha_kernel(&q, &log_gs, mask)
}

/// [`accessibility_alpha`] from the discretized transition and the log
/// observation weights of `y_1..y_l`.
pub fn accessibility_alpha_kernel(q: &KernelMatrix, log_gs: &[Vec<f64>], mask: &[bool]) -> Result<f64> {
    let n = q.size();
    if log_gs.is_empty() || log_gs.len() > 3 {
        return Err(Error::param("ell", "accessibility needs 1 <= ell <= 3"));
    }
    if mask.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: mask.len() });
    }
    if !mask.iter().any(|&b| b) {
        return Ok(0.0);
    }
    if mask.iter().all(|&b| b) {
        return Ok(1.0);
    }
    // Row scalings cancel in the ratio, so the chain Q G_1 ... Q G_l is
    // accumulated as a product of row-normalized kernels.
    let zero = vec![0.0; n];
    let mut p = forward_kernel_from(q, &log_gs[0], &zero)?;
    for lg in &log_gs[1..] {
        p = p.then(&forward_kernel_from(q, lg, &zero)?)?;
    }
    let per_row: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|x0| {
            if !p.is_valid(x0) {
                return (0.0, true);
            }
            let mut num = vec![0.0; n];
            let mut den = vec![0.0; n];
            for (l, &w) in p.row(x0).iter().enumerate() {
                if w == 0.0 || !q.is_valid(l) {
                    continue;
                }
                let ql = q.row(l);
                if mask[l] {
                    for t in 0..n {
                        let v = w * ql[t];
                        num[t] += v;
                        den[t] += v;
                    }
                } else {
                    for t in 0..n {
                        den[t] += w * ql[t];
                    }
                }
            }
            let mut best = 1.0f64;
            let mut degenerate = false;
            for t in 0..n {
                if den[t] > 0.0 {
                    best = best.min((num[t] / den[t]).min(1.0));
                } else {
                    degenerate = true;
                }
            }
            (best, degenerate)
        })
        .collect();
    if per_row.iter().any(|r| r.1) {
        log::warn!("accessibility: W(x0, x2; X) vanishes for some endpoint pair, alpha set to 0");
        return Ok(0.0);
    }
    Ok(per_row.iter().map(|r| r.0).fold(1.0, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityCheck {
    /// `inf_x F_{k,l|n}(x, C)` against `alpha`.
    pub mass: FloorCheck,
    /// `(l+1)`-step full-space coupling constant against
    /// `alpha sigma_- / sigma_+`, when `C` is strong small.
    pub coupling: Option<FloorCheck>,
}

impl AccessibilityCheck {
    pub fn pass(&self) -> bool {
        self.mass.pass && self.coupling.is_none_or(|c| c.pass)
    }
}

pub fn accessibility_floor_check(
    pipeline: &SmoothingPipeline,
    k: usize,
    ell: usize,
    mask: &[bool],
    alpha: f64,
    small: Option<&SmallSetConstants>,
) -> Result<AccessibilityCheck> {
    if ell == 0 || k + ell > pipeline.n() {
        return Err(Error::param("ell", "need 1 <= ell and k + ell <= n"));
    }
    let kern = pipeline.multi_step(k, ell)?;
    let mass = (0..kern.size())
        .filter(|&i| kern.is_valid(i))
        .map(|i| kern.row(i).iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| v).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let coupling = match small {
        Some(s) => {
            let longer = pipeline.multi_step(k, ell + 1)?;
            let eps = set_coupling_constant(&longer, pipeline.grid(), &CouplingSetSpec::FullSpace, DEFAULT_PAIR_BUDGET);
            Some(FloorCheck::new(s.ratio() * alpha, eps))
        }
        None => None,
    };
    Ok(AccessibilityCheck {
        mass: FloorCheck::new(alpha, mass),
        coupling,
    })
}

/// Full-space coupling constants of the `m`-skeleton blocks `0..floor(n/m)`.
pub fn block_epsilons(pipeline: &SmoothingPipeline, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::param("m", "must be >= 1"));
    }
    (0..pipeline.n() / m)
        .map(|k| {
            let kern = pipeline.skeleton(k, m)?;
            Ok(set_coupling_constant(&kern, pipeline.grid(), &CouplingSetSpec::FullSpace, DEFAULT_PAIR_BUDGET))
        })
        .collect()
}

/// `prod_k (1 - epsilon_k)` over complete blocks, clamped to `[0, 1]`.
pub fn uniform_product_bound(epsilons: &[f64]) -> f64 {
    epsilons.iter().map(|e| 1.0 - e.clamp(0.0, 1.0)).product::<f64>().clamp(0.0, 1.0)
}

fn bounded_noise_support(model: &ModelSpec) -> Result<f64> {
    match &model.family {
        ModelFamily::BoundedNoise { obs_noise, .. } => Ok(obs_noise.support_bound()),
        _ => Err(Error::Inapplicable("bounded-noise constants need the bounded-noise family".into())),
    }
}

/// `rho(y, y') = inf q / sup q` over `C(y) x C(y')`, `C(y) = {|x| <= |y| + M}`,
/// using the discretized kernel entries.
pub fn bounded_noise_rho(model: &ModelSpec, grid: &Grid, q: &KernelMatrix, y: f64, y_next: f64) -> Result<f64> {
    let m = bounded_noise_support(model)?;
    let a = grid.mask(|x| x.abs() <= y.abs() + m);
    let b = grid.mask(|x| x.abs() <= y_next.abs() + m);
    let ia: Vec<usize> = (0..grid.len()).filter(|&i| a[i] && q.is_valid(i)).collect();
    let ib: Vec<usize> = (0..grid.len()).filter(|&i| b[i]).collect();
    if ia.is_empty() || ib.is_empty() {
        return Err(Error::EmptySet("bounded-noise level set on this grid".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in &ia {
        for &j in &ib {
            let l = q.log_entry(i, j);
            lo = lo.min(l);
            hi = hi.max(l);
        }
    }
    Ok((lo - hi).exp())
}

/// `prod_{j < floor(n/2)} (1 - rho(Y_{2j+1}, Y_{2j+2}))`: block `j` covers
/// the two kernels moving index `2j` to `2j + 2`.
pub fn bounded_noise_bound(model: &ModelSpec, grid: &Grid, q: &KernelMatrix, ys: &[f64], n: usize) -> Result<f64> {
    if ys.len() <= n {
        return Err(Error::DimensionMismatch { expected: n + 1, got: ys.len() });
    }
    let mut bound = 1.0;
    for j in 0..n / 2 {
        bound *= 1.0 - bounded_noise_rho(model, grid, q, ys[2 * j + 1], ys[2 * j + 2])?;
    }
    Ok(bound)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarConstants {
    pub diam: f64,
    pub epsilon: f64,
    pub nu: f64,
    /// Infinite when the tail integral diverges.
    pub upsilon: f64,
}

/// `epsilon(C)`, `nu(C)` for a set of diameter `diam` and the tail integral
/// `Upsilon`. Every supported noise is non-increasing in `|u|` from 0, so the
/// flat radius `M` is 0.
pub fn far_constants(p: &FunctionalARParams, diam: f64) -> Result<FarConstants> {
    if !(diam >= 0.0 && diam.is_finite()) {
        return Err(Error::param("diam", "must be finite and non-negative"));
    }
    let pu = &p.state_noise;
    let gamma = pu
        .gamma()
        .ok_or_else(|| Error::Inapplicable(format!("{} state noise has no positive gamma", pu.kind)))?;
    let inf = pu.pdf(diam);
    let sup = pu.pdf(0.0);
    Ok(FarConstants {
        diam,
        epsilon: (gamma * pu.pdf(diam)).min(inf).min(1.0 / sup),
        nu: inf,
        upsilon: upsilon_integral(pu, &p.obs_noise, p.a_plus, p.b_minus),
    })
}

/// `int_0^inf p_U(x)^{-1} p_V(b x) p_U(a x)^{-1} dx` by midpoint rectangles,
/// stopped once the integrand falls below 1e-300.
pub fn upsilon_integral(pu: &NoiseDensity, pv: &NoiseDensity, a_plus: f64, b_minus: f64) -> f64 {
    const LOG_CUTOFF: f64 = -690.7755;
    let h = 1e-3 * pu.scale.min(pv.scale / b_minus.max(1e-12));
    let x_max = 1e4 * pu.scale.max(pv.scale);
    let log_f = |x: f64| -pu.log_pdf(x) + pv.log_pdf(b_minus * x) - pu.log_pdf(a_plus * x);
    let mut sum = 0.0;
    let mut x = 0.5 * h;
    while x < x_max {
        let l = log_f(x);
        if l.is_nan() || l == f64::INFINITY {
            return f64::INFINITY;
        }
        if l < LOG_CUTOFF {
            return sum * h;
        }
        sum += l.exp();
        x += h;
    }
    f64::INFINITY
}

/// `min_y int_{|x - b^{-1}(y)| <= K} p_V(|y - b(x)|) dx`.
pub fn borne_inf_check(p: &FunctionalARParams, k: f64, ys: &[f64]) -> f64 {
    const POINTS: usize = 4001;
    let h = 2.0 * k / POINTS as f64;
    ys.iter()
        .map(|&y| {
            let c = p.b_inverse(y);
            (0..POINTS)
                .map(|i| p.obs_noise.pdf(y - p.b(c - k + (i as f64 + 0.5) * h)))
                .sum::<f64>()
                * h
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianConstants {
    pub beta: f64,
    pub gamma2_minus: f64,
    pub gamma2_plus: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub beta_tilde: f64,
    pub c: f64,
    /// `lambda = beta_tilde^2`.
    pub lambda: f64,
    /// `1 v rho (1 - eps) / lambda`, the form used in the bound.
    pub b: f64,
    /// `1 v rho (1 - eps) lambda`, the definition's product form.
    pub b_product_form: f64,
    /// `1 v rho (1 - eps) beta_tilde^2` as printed in the example.
    pub b_example_form: f64,
    /// Mean slope and variance of the last kernel `F_{n-1|n}`.
    pub beta_last: f64,
    pub gamma2_last: f64,
}

fn gaussian_beta(p: &GaussianARParams) -> f64 {
    let (s2, t2, a) = (p.sigma * p.sigma, p.tau * p.tau, p.alpha);
    a.abs() * t2 * (s2 + t2) / ((s2 + t2).powi(2) + t2 * a * a * s2)
}

fn gaussian_gammas(p: &GaussianARParams) -> (f64, f64) {
    let (s2, t2, a) = (p.sigma * p.sigma, p.tau * p.tau, p.alpha);
    (
        s2 * t2 / ((1.0 + a * a) * t2 + s2),
        s2 * t2 * (s2 + t2) / ((s2 + t2).powi(2) + a * a * t2 * s2),
    )
}

fn gaussian_last(p: &GaussianARParams) -> (f64, f64) {
    let (s2, t2) = (p.sigma * p.sigma, p.tau * p.tau);
    (p.alpha.abs() * t2 / (s2 + t2), s2 * t2 / (s2 + t2))
}

/// `(1 - beta_tilde^2 + 2 gamma^2) / (beta_tilde^2 - slope^2)`, the least
/// `c^2` giving `lambda <= beta_tilde^2` off the tube.
fn width_bound(slope: f64, gamma2: f64, beta_tilde: f64) -> f64 {
    let bt2 = beta_tilde * beta_tilde;
    (1.0 - bt2 + 2.0 * gamma2) / (bt2 - slope * slope)
}

/// `sqrt((1 + b^2) / 2)` with `b` the larger of the interior and last-index
/// mean slopes.
pub fn default_beta_tilde(p: &GaussianARParams) -> f64 {
    let b = gaussian_beta(p).max(gaussian_last(p).0);
    ((1.0 + b * b) / 2.0).sqrt()
}

/// Tube width 10% above the least width that gives `lambda <= beta_tilde^2`
/// at every index, the last one included.
pub fn auto_coupling_width(p: &GaussianARParams, beta_tilde: f64) -> Result<f64> {
    let beta = gaussian_beta(p);
    if !(beta < beta_tilde && beta_tilde < 1.0) {
        return Err(Error::param("beta_tilde", format!("need {beta} < beta_tilde < 1")));
    }
    let (_, g2p) = gaussian_gammas(p);
    let mut c2 = width_bound(beta, g2p, beta_tilde);
    let (bl, g2l) = gaussian_last(p);
    if bl < beta_tilde {
        c2 = c2.max(width_bound(bl, g2l, beta_tilde));
    } else {
        log::warn!("beta_tilde below the last kernel's slope; the last index is not covered");
    }
    Ok(1.1 * c2.max(0.0).sqrt())
}

/// Closed-form constants for the Gaussian AR model and tube width `c`.
pub fn gaussian_constants(p: &GaussianARParams, c: f64, beta_tilde: f64) -> Result<GaussianConstants> {
    let beta = gaussian_beta(p);
    if !(beta < beta_tilde && beta_tilde < 1.0) {
        return Err(Error::param("beta_tilde", format!("need {beta} < beta_tilde < 1")));
    }
    let (g2m, g2p) = gaussian_gammas(p);
    let bound = width_bound(beta, g2p, beta_tilde);
    if !(c * c > bound) {
        return Err(Error::CouplingWidthTooSmall { c, bound });
    }
    let epsilon = gaussian_epsilon(beta, c, g2m);
    let rho = (1.0 + beta * beta * c * c + 2.0 * g2p) / (1.0 - epsilon);
    let lambda = beta_tilde * beta_tilde;
    let (beta_last, gamma2_last) = gaussian_last(p);
    Ok(GaussianConstants {
        beta,
        gamma2_minus: g2m,
        gamma2_plus: g2p,
        epsilon,
        rho,
        beta_tilde,
        c,
        lambda,
        b: (rho * (1.0 - epsilon) / lambda).max(1.0),
        b_product_form: (rho * (1.0 - epsilon) * lambda).max(1.0),
        b_example_form: (rho * (1.0 - epsilon) * beta_tilde * beta_tilde).max(1.0),
        beta_last,
        gamma2_last,
    })
}

/// Overlap floor `1 - tv(beta c, gamma_-)` of two kernel rows in the tube.
pub fn gaussian_epsilon(beta: f64, c: f64, gamma2_minus: f64) -> f64 {
    1.0 - tv_gaussians(beta * c, gamma2_minus.sqrt())
}

/// `V(x, x') = 1 + (x - x')^2`.
pub fn quadratic_drift(x: f64, x_prime: f64) -> f64 {
    1.0 + (x - x_prime).powi(2)
}

/// `xi (x) xi'(V)` for the quadratic drift function.
pub fn pair_drift_mean(p: &ProbVector, q: &ProbVector) -> f64 {
    let m2 = |v: &ProbVector| v.variance() + v.mean().powi(2);
    1.0 + m2(p) + m2(q) - 2.0 * p.mean() * q.mean()
}

/// Drift constants of a single kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexDrift {
    pub epsilon: f64,
    pub lambda: f64,
    pub lambda_pair: (f64, f64),
    /// Max of `R V` over set pairs, residual built with the set-wide epsilon.
    pub rho_set: f64,
    /// Same, residual built with each pair's own overlap.
    pub rho_pairwise: f64,
}

impl IndexDrift {
    pub fn rho(&self) -> f64 {
        self.rho_set.max(self.rho_pairwise)
    }
}

fn residual_moments(kern: &KernelMatrix, points: &[f64], a: usize, b: usize, scale: f64) -> (f64, f64) {
    let (ra, rb) = (kern.row(a), kern.row(b));
    let (w0, w1) = kern.window(a);
    let (mut s, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for t in w0..w1 {
        let r = (ra[t] - scale * ra[t].min(rb[t])).max(0.0);
        s += r;
        s1 += r * points[t];
        s2 += r * points[t] * points[t];
    }
    let mean = s1 / s;
    (mean, (s2 / s - mean * mean).max(0.0))
}

/// Empirical `lambda` (max of `F V / V` off the set), `rho` (max of `R V` on
/// the set) and `epsilon` for one kernel and the quadratic drift.
pub fn index_drift(kern: &KernelMatrix, grid: &Grid, set: &CouplingSetSpec) -> Result<IndexDrift> {
    if grid.is_wraparound() {
        return Err(Error::Inapplicable("the quadratic drift needs a non-periodic state space".into()));
    }
    let set = set.at(0);
    let points = grid.points();
    let moments = kern.row_moments(points);
    let epsilon = set_coupling_constant(kern, grid, set, DEFAULT_PAIR_BUDGET);
    let n = grid.len();
    let (lambda, lambda_pair) = (0..n)
        .into_par_iter()
        .filter_map(|i| moments[i].map(|m| (i, m)))
        .map(|(i, (mi, vi))| {
            let mut best = (f64::NEG_INFINITY, (i, i));
            for j in i..n {
                let Some((mj, vj)) = moments[j] else { continue };
                if set.contains(grid, i, j) {
                    continue;
                }
                let r = (1.0 + (mi - mj).powi(2) + vi + vj) / quadratic_drift(points[i], points[j]);
                if r > best.0 {
                    best = (r, (i, j));
                }
            }
            best
        })
        .reduce(|| (f64::NEG_INFINITY, (0, 0)), |a, b| if b.0 > a.0 { b } else { a });
    let lambda = lambda.max(0.0);
    let mut pairs = candidate_pairs(grid, kern.valid_mask(), set, RHO_PAIR_BUDGET);
    let diag: Vec<usize> = (0..n).filter(|&i| kern.is_valid(i) && set.contains(grid, i, i)).collect();
    let step = (diag.len() / 256).max(1);
    pairs.extend(diag.iter().step_by(step).map(|&i| (i, i)));
    let (rho_set, rho_pairwise) = pairs
        .par_iter()
        .map(|&(i, j)| {
            let ov = pair_overlap(kern, i, j);
            let value = |eps: f64| -> f64 {
                if eps >= 1.0 - 1e-12 || ov <= 0.0 {
                    return 0.0;
                }
                let s = eps / ov;
                let (ma, va) = residual_moments(kern, points, i, j, s);
                let (mb, vb) = residual_moments(kern, points, j, i, s);
                1.0 + (ma - mb).powi(2) + va + vb
            };
            (value(epsilon.min(ov)), if i == j { 0.0 } else { value(ov) })
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    Ok(IndexDrift {
        epsilon,
        lambda,
        lambda_pair: (points[lambda_pair.0], points[lambda_pair.1]),
        rho_set,
        rho_pairwise,
    })
}

/// Per-index pairwise drift constants for `F_{0|n} .. F_{n-1|n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub lambda: Vec<f64>,
    pub rho: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// `1 v rho (1 - eps) / lambda`.
    pub b: Vec<f64>,
    /// `1 v rho (1 - eps) lambda`, reported alongside.
    pub b_product_form: Vec<f64>,
    pub lambda_pairs: Vec<(f64, f64)>,
}

impl DriftSpec {
    pub fn from_indices(items: &[IndexDrift]) -> Self {
        // With no pair outside the set the drift term vanishes and B is moot.
        let b = |d: &IndexDrift, f: fn(f64, f64) -> f64| {
            if d.lambda > 0.0 {
                f(d.rho() * (1.0 - d.epsilon), d.lambda).max(1.0)
            } else {
                1.0
            }
        };
        DriftSpec {
            lambda: items.iter().map(|d| d.lambda).collect(),
            rho: items.iter().map(|d| d.rho()).collect(),
            epsilon: items.iter().map(|d| d.epsilon).collect(),
            b: items.iter().map(|d| b(d, |a, l| a / l)).collect(),
            b_product_form: items.iter().map(|d| b(d, |a, l| a * l)).collect(),
            lambda_pairs: items.iter().map(|d| d.lambda_pair).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda.iter().copied().fold(0.0, f64::max)
    }

    pub fn b_max(&self) -> f64 {
        self.b.iter().copied().fold(1.0, f64::max)
    }

    pub fn epsilon_min(&self) -> f64 {
        self.epsilon.iter().copied().fold(1.0, f64::min)
    }
}

/// Runs [`index_drift`] on every forward kernel of the pipeline and fails at
/// the first index where `lambda >= 1`.
pub fn drift_verify(pipeline: &SmoothingPipeline, set: &CouplingSetSpec) -> Result<DriftSpec> {
    let mut items = Vec::with_capacity(pipeline.n());
    for k in 0..pipeline.n() {
        let kern = pipeline.forward_kernel(k)?;
        let d = index_drift(&kern, pipeline.grid(), set.at(k))?;
        if d.lambda >= 1.0 {
            return Err(Error::DriftFails {
                index: k,
                lambda: d.lambda,
                x: d.lambda_pair.0,
                x_prime: d.lambda_pair.1,
            });
        }
        items.push(d);
    }
    Ok(DriftSpec::from_indices(&items))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmnScan {
    /// `A_{m,n}` for `m = 1..=n` (entry `m - 1`).
    pub values: Vec<f64>,
    pub min: f64,
    pub argmin: usize,
}

fn sorted_logs(values: &[f64], descending: bool, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = values[a].total_cmp(&values[b]);
        (if descending { o.reverse() } else { o }).then(a.cmp(&b))
    });
    let mut acc = vec![0.0];
    for i in idx {
        acc.push(acc.last().unwrap() + f(values[i]));
    }
    acc
}

/// `A_{m,n} = prod_{i<=m} (1 - eps_(i)) + prod lambda * prod_{i<=m} B_(i) * V0`
/// with ascending order statistics of `eps` and descending of `B`; the `B`
/// product takes `m + 1` factors, capped at the number available.
pub fn amn_scan(spec: &DriftSpec, v0: f64) -> AmnScan {
    let n = spec.len();
    let eps = sorted_logs(&spec.epsilon, false, |e| (1.0 - e.clamp(0.0, 1.0)).ln());
    let b = sorted_logs(&spec.b, true, f64::ln);
    let log_lambda: f64 = spec.lambda.iter().map(|l| l.ln()).sum();
    let values: Vec<f64> = (1..=n)
        .map(|m| eps[m].exp() + (log_lambda + b[(m + 1).min(n)] + v0.ln()).exp())
        .collect();
    let (argmin, min) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i + 1, v) } else { acc });
    AmnScan { values, min, argmin }
}

pub fn amn_bound(spec: &DriftSpec, v0: f64, m: usize) -> Result<f64> {
    if m == 0 || m > spec.len() {
        return Err(Error::param("m", "need 1 <= m <= n"));
    }
    Ok(amn_scan(spec, v0).values[m - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarsuResult {
    pub variance: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Variance of the density `exp(log_density)` on `[lo, hi]` against `1/c`,
/// after checking `(log f)'' <= -c` there by central differences.
pub fn varsu_check(log_density: impl Fn(f64) -> f64, c: f64, lo: f64, hi: f64) -> Result<VarsuResult> {
    const POINTS: usize = 20001;
    if !(c > 0.0 && lo < hi) {
        return Err(Error::param("c", "need c > 0 and lo < hi"));
    }
    let h = (hi - lo) / POINTS as f64;
    let fd = 1e-4 * (hi - lo);
    let xs: Vec<f64> = (0..POINTS).map(|i| lo + (i as f64 + 0.5) * h).collect();
    for &x in &xs {
        let d2 = (log_density(x + fd) - 2.0 * log_density(x) + log_density(x - fd)) / (fd * fd);
        if d2 > -c + 1e-5 * (1.0 + c) {
            return Err(Error::Inapplicable(format!("log-density curvature {d2} exceeds -c at x = {x}")));
        }
    }
    let logs: Vec<f64> = xs.iter().map(|&x| log_density(x)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    let mean = w.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / s;
    let variance = w.iter().zip(&xs).map(|(w, x)| w * (x - mean).powi(2)).sum::<f64>() / s;
    let bound = 1.0 / c;
    Ok(VarsuResult {
        variance,
        bound,
        pass: variance <= bound + 1e-6,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnimodalReport {
    pub c: f64,
    pub alpha: f64,
    /// Largest second difference of `log f(x, .)` plus `c`.
    pub curvature_excess: f64,
    pub max_variance: f64,
    pub max_mean_slope: f64,
    pub curvature_ok: bool,
    pub variance_ok: bool,
    pub lipschitz_ok: bool,
}

impl UnimodalReport {
    pub fn pass(&self) -> bool {
        self.curvature_ok && self.variance_ok && self.lipschitz_ok
    }
}

fn sup_curvature(noise: &NoiseDensity, range: f64) -> f64 {
    (0..=4000)
        .map(|i| noise.log_curvature(-range + 2.0 * range * i as f64 / 4000.0))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Curvature, variance and mean-map checks on every forward kernel of a
/// linear-drift model with log-concave noises; `c = -(sup phi'' + b^2 sup psi'')`.
pub fn unimodal_kernel_checks(pipeline: &SmoothingPipeline, tol: f64) -> Result<UnimodalReport> {
    let (alpha, pu, pv, slope) = match &pipeline.model().family {
        ModelFamily::GaussianAr(p) => (
            p.alpha,
            NoiseDensity::new(crate::model::NoiseKind::Gaussian, p.sigma)?,
            NoiseDensity::new(crate::model::NoiseKind::Gaussian, p.tau)?,
            1.0,
        ),
        ModelFamily::FunctionalAr(p) if p.drift.sine == 0.0 => (p.drift.linear, p.state_noise, p.obs_noise, p.obs_slope),
        _ => return Err(Error::Inapplicable("unimodal checks need a linear drift model".into())),
    };
    if !(pu.is_log_concave() && pv.is_log_concave()) {
        return Err(Error::Inapplicable("noise densities are not log-concave".into()));
    }
    let grid = pipeline.grid();
    let span = grid.hi() - grid.lo() + grid.lo().abs().max(grid.hi().abs());
    let y_max = pipeline.observations().iter().fold(0.0f64, |a, y| a.max(y.abs()));
    let c = -(sup_curvature(&pu, span) + slope * slope * sup_curvature(&pv, slope.abs() * span + y_max));
    if !(c > 0.0) {
        return Err(Error::Inapplicable("noise curvature is not bounded away from 0".into()));
    }
    let q = pipeline.transition();
    let h = grid.step();
    let points = grid.points();
    let n = grid.len();
    let mut curvature_excess = f64::NEG_INFINITY;
    let mut max_variance = 0.0f64;
    let mut max_mean_slope = 0.0f64;
    for k in 0..pipeline.n() {
        let lw: Vec<f64> = pipeline
            .log_observation(k + 1)
            .iter()
            .zip(pipeline.log_backward(k + 1))
            .map(|(a, b)| a + b)
            .collect();
        let excess = (0..n)
            .into_par_iter()
            .filter(|&i| q.is_valid(i))
            .map(|i| {
                let lr: Vec<f64> = (0..n).map(|t| q.log_entry(i, t) + lw[t]).collect();
                let max = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut worst = f64::NEG_INFINITY;
                for t in 1..n - 1 {
                    if lr[t - 1] > max - 23.0 && lr[t] > max - 23.0 && lr[t + 1] > max - 23.0 {
                        worst = worst.max((lr[t + 1] - 2.0 * lr[t] + lr[t - 1]) / (h * h) + c);
                    }
                }
                worst
            })
            .reduce(|| f64::NEG_INFINITY, f64::max);
        curvature_excess = curvature_excess.max(excess);
        let moments = pipeline.forward_kernel(k)?.row_moments(points);
        for i in 0..n {
            if let Some((m, v)) = moments[i] {
                max_variance = max_variance.max(v);
                if let Some(Some((m2, _))) = moments.get(i + 1) {
                    max_mean_slope = max_mean_slope.max((m2 - m).abs() / h);
                }
            }
        }
    }
    Ok(UnimodalReport {
        c,
        alpha,
        curvature_excess,
        max_variance,
        max_mean_slope,
        curvature_ok: curvature_excess <= tol,
        variance_ok: max_variance <= 1.0 / c + tol,
        lipschitz_ok: max_mean_slope <= alpha.abs() + tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::model::{make_preset, DriftMap, NoiseKind, PresetParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn gaussian_tv_matches_erf() {
        assert_eq!(tv_gaussians(0.0, 1.0), 0.0);
        // 2 Phi(1) - 1 from tables.
        assert_abs_diff_eq!(tv_gaussians(2.0, 1.0), 0.682_689_492_137_086, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_cdf(1.959_963_984_540_054), 0.975, epsilon = 1e-12);
    }

    #[test]
    fn two_state_small_set() {
        let k = KernelMatrix::from_rows(2, vec![0.6, 0.4, 0.4, 0.6]).unwrap();
        let s = strong_small_constants(&k, &[true, true]).unwrap();
        assert_abs_diff_eq!(s.sigma_minus, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(s.sigma_plus, 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.nu[0], 0.5, epsilon = 1e-15);
        let single = strong_small_constants(&k, &[true, false]).unwrap();
        assert_eq!((single.sigma_minus, single.sigma_plus), (1.0, 1.0));
        assert!(strong_small_constants(&k, &[false, false]).is_err());
    }

    #[test]
    fn two_state_floor() {
        let m = make_preset("discrete", &PresetParams::new()).unwrap();
        let g = Arc::new(m.default_grid().unwrap());
        let p = SmoothingPipeline::new(&m, g, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let s = strong_small_constants(p.transition(), &[true, true]).unwrap();
        for k in 0..3 {
            let f = coupling_floor_from_small_set(&p, k, &s, &[true, true]).unwrap();
            assert!(f.pass);
            assert_abs_diff_eq!(f.floor, 2.0 / 3.0, epsilon = 1e-15);
        }
        let s1 = strong_small_constants(p.transition(), &[false, true]).unwrap();
        let f = coupling_floor_from_small_set(&p, 0, &s1, &[false, true]).unwrap();
        assert_eq!((f.floor, f.observed), (1.0, 1.0));
    }

    fn two_state_model() -> (ModelSpec, Grid, KernelMatrix) {
        let m = make_preset("discrete", &PresetParams::new()).unwrap();
        let g = m.default_grid().unwrap();
        let q = m.discretize_kernel(&g).unwrap();
        (m, g, q)
    }

    #[test]
    fn accessibility_two_state_by_enumeration() {
        let (m, g, q) = two_state_model();
        let qe = |a: usize, b: usize| q.entry(a, b);
        let ge = |x: usize, y: f64| m.eval_observation(x as f64, y).unwrap();
        for y in [0.0, 1.0] {
            let alpha = accessibility_alpha(&m, &g, &[y], &[true, false]).unwrap();
            let mut expect = f64::INFINITY;
            for x0 in 0..2 {
                for x2 in 0..2 {
                    let w = |x1: usize| qe(x0, x1) * ge(x1, y) * qe(x1, x2);
                    expect = expect.min(w(0) / (w(0) + w(1)));
                }
            }
            assert_abs_diff_eq!(alpha, expect, epsilon = 1e-14);
        }
        assert_eq!(accessibility_alpha(&m, &g, &[0.0], &[true, true]).unwrap(), 1.0);
        assert_eq!(accessibility_alpha(&m, &g, &[0.0], &[false, false]).unwrap(), 0.0);
        assert!(accessibility_alpha(&m, &g, &[0.0; 4], &[true, false]).is_err());
    }

    #[test]
    fn accessibility_two_state_floor() {
        let (m, g, _) = two_state_model();
        let ys = vec![1.0, 0.0, 1.0, 1.0, 0.0];
        let p = SmoothingPipeline::new(&m, Arc::new(g.clone()), ys.clone()).unwrap();
        let mask = [true, false];
        let small = strong_small_constants(p.transition(), &mask).unwrap();
        for ell in 1..=2 {
            for k in 0..=(4 - ell - 1) {
                let a = accessibility_alpha(&m, &g, &ys[k + 1..k + 1 + ell], &mask).unwrap();
                let chk = accessibility_floor_check(&p, k, ell, &mask, a, Some(&small)).unwrap();
                assert!(chk.pass(), "{chk:?}");
            }
        }
        let full = accessibility_floor_check(&p, 0, 1, &[true, true], 1.0, None).unwrap();
        assert!(full.pass());
    }

    #[test]
    fn uniform_product_edges() {
        assert_eq!(uniform_product_bound(&[0.3, 1.0, 0.2]), 0.0);
        assert_eq!(uniform_product_bound(&[0.0; 5]), 1.0);
        let r = 2.0 / 3.0;
        assert_abs_diff_eq!(uniform_product_bound(&[r; 7]), (1.0f64 / 3.0).powi(7), epsilon = 1e-15);
    }

    #[test]
    fn bounded_noise_three_point() {
        let m = make_preset("bounded-noise", &PresetParams::new()).unwrap();
        let g = build_grid(-1.0, 1.0, 3, false).unwrap();
        let q = KernelMatrix::from_rows(3, vec![0.5, 0.3, 0.2, 0.3, 0.4, 0.3, 0.1, 0.3, 0.6]).unwrap();
        // M = 0.5: C(0) = {0}, C(0.6) = all three points.
        let rho = bounded_noise_rho(&m, &g, &q, 0.0, 0.6).unwrap();
        assert_abs_diff_eq!(rho, 0.3 / 0.4, epsilon = 1e-12);
        let rho = bounded_noise_rho(&m, &g, &q, 0.6, 0.6).unwrap();
        assert_abs_diff_eq!(rho, 0.1 / 0.6, epsilon = 1e-12);
        let flat = KernelMatrix::from_rows(3, vec![1.0; 9]).unwrap();
        assert_abs_diff_eq!(bounded_noise_rho(&m, &g, &flat, 0.1, 2.0).unwrap(), 1.0, epsilon = 1e-12);
        let narrow = build_grid(3.0, 4.0, 3, false).unwrap();
        assert!(bounded_noise_rho(&m, &narrow, &q, 0.0, 0.0).is_err());
    }

    fn laplace_far(obs: NoiseDensity) -> FunctionalARParams {
        FunctionalARParams::new(
            DriftMap { linear: 1.0, sine: 0.0 },
            1.0,
            NoiseDensity::new(NoiseKind::Laplace, 1.0).unwrap(),
            obs,
        )
        .unwrap()
    }

    #[test]
    fn far_laplace_constants() {
        let p = laplace_far(NoiseDensity::new(NoiseKind::Gaussian, 1.0).unwrap());
        let c = far_constants(&p, 1.0).unwrap();
        assert_abs_diff_eq!(c.epsilon, 0.5 * (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.nu, 0.5 * (-1.0f64).exp(), epsilon = 1e-15);
        // int_0^inf 4 e^{2x} phi(x) dx = 4 e^2 Phi(2).
        let oracle = 4.0 * 2.0f64.exp() * 0.977_249_868_051_820_8;
        assert!((c.upsilon - oracle).abs() / oracle < 1e-6, "{} vs {oracle}", c.upsilon);
        let heavy = laplace_far(NoiseDensity::new(NoiseKind::Cauchy, 1.0).unwrap());
        assert!(far_constants(&heavy, 1.0).unwrap().upsilon.is_infinite());
        let gauss_state = FunctionalARParams { state_noise: NoiseDensity::new(NoiseKind::Gaussian, 1.0).unwrap(), ..p };
        assert!(matches!(far_constants(&gauss_state, 1.0), Err(Error::Inapplicable(_))));
    }

    #[test]
    fn borne_inf_normal_three_sd() {
        let p = laplace_far(NoiseDensity::new(NoiseKind::Gaussian, 1.0).unwrap());
        let ys = [-40.0, -1.3, 0.0, 2.5, 17.0];
        // P(|Z| <= 3) from tables.
        assert_abs_diff_eq!(borne_inf_check(&p, 3.0, &ys), 0.997_300_203_936_740, epsilon = 1e-6);
        assert!(borne_inf_check(&p, 1e-4, &ys) < 1e-3);
        let ks = [0.1, 0.5, 1.0, 2.0, 4.0];
        let vals: Vec<f64> = ks.iter().map(|&k| borne_inf_check(&p, k, &ys)).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    }

    #[test]
    fn gaussian_constants_by_hand() {
        let p = GaussianARParams::new(0.5, 1.0, 1.0).unwrap();
        let c = gaussian_constants(&p, 3.0, 0.6).unwrap();
        // beta = 0.5 * 2 / 4.25; gamma_-^2 = 1 / 2.25; gamma_+^2 = 2 / 4.25.
        assert_abs_diff_eq!(c.beta, 0.235_294_117_647_058_8, epsilon = 1e-12);
        assert_abs_diff_eq!(c.gamma2_minus, 0.444_444_444_444_444_4, epsilon = 1e-12);
        assert_abs_diff_eq!(c.gamma2_plus, 0.470_588_235_294_117_6, epsilon = 1e-12);
        assert!(c.beta < 0.5 && c.gamma2_minus <= c.gamma2_plus && c.epsilon > 0.0 && c.epsilon <= 1.0);
        assert_abs_diff_eq!(c.b, (1.0 + c.beta.powi(2) * 9.0 + 2.0 * c.gamma2_plus) / 0.36, epsilon = 1e-12);
        assert_eq!(gaussian_epsilon(c.beta, 0.0, c.gamma2_minus), 1.0);
        assert!(matches!(gaussian_constants(&p, 0.5, 0.6), Err(Error::CouplingWidthTooSmall { .. })));
        assert!(gaussian_constants(&p, 3.0, 0.2).is_err());
        let bt = default_beta_tilde(&GaussianARParams::new(0.9, 1.0, 1.0).unwrap());
        let w = auto_coupling_width(&GaussianARParams::new(0.9, 1.0, 1.0).unwrap(), bt).unwrap();
        assert!(gaussian_constants(&GaussianARParams::new(0.9, 1.0, 1.0).unwrap(), w, bt).is_ok());
    }

    fn constant_spec(n: usize, eps: f64, lambda: f64, b: f64) -> DriftSpec {
        DriftSpec {
            lambda: vec![lambda; n],
            rho: vec![0.0; n],
            epsilon: vec![eps; n],
            b: vec![b; n],
            b_product_form: vec![b; n],
            lambda_pairs: vec![(0.0, 0.0); n],
        }
    }

    #[test]
    fn amn_constant_closed_form() {
        let n = 12;
        let s = constant_spec(n, 0.3, 0.8, 1.7);
        for m in 1..n {
            let expect = 0.7f64.powi(m as i32) + 0.8f64.powi(n as i32) * 1.7f64.powi(m as i32 + 1) * 5.0;
            assert!((amn_bound(&s, 5.0, m).unwrap() - expect).abs() < 1e-12 * expect.max(1.0));
        }
        let ones = constant_spec(n, 1.0, 0.5, 1.0);
        let scan = amn_scan(&ones, 2.0);
        assert_abs_diff_eq!(scan.values[0], 0.5f64.powi(12) * 2.0, epsilon = 1e-15);
        assert!(amn_bound(&s, 5.0, 0).is_err());
    }

    #[test]
    fn amn_uses_order_statistics() {
        let mut s = constant_spec(4, 0.5, 0.5, 1.0);
        s.epsilon = vec![0.9, 0.1, 0.5, 0.2];
        s.b = vec![1.0, 3.0, 2.0, 1.5];
        let a1 = amn_bound(&s, 1.0, 1).unwrap();
        assert_abs_diff_eq!(a1, 0.9 + 0.5f64.powi(4) * 3.0 * 2.0, epsilon = 1e-12);
        let a2 = amn_bound(&s, 1.0, 2).unwrap();
        assert_abs_diff_eq!(a2, 0.9 * 0.8 + 0.5f64.powi(4) * 3.0 * 2.0 * 1.5, epsilon = 1e-12);
    }

    #[test]
    fn pair_drift_mean_matches_double_sum() {
        let g = Arc::new(build_grid(-2.0, 2.0, 9, false).unwrap());
        let p = ProbVector::from_weights(g.clone(), &[1., 2., 3., 4., 5., 4., 3., 2., 1.]).unwrap();
        let q = ProbVector::from_weights(g.clone(), &[0., 0., 1., 1., 0., 3., 0., 0., 2.]).unwrap();
        let (pp, qq) = (p.probs(), q.probs());
        let mut direct = 0.0;
        for i in 0..9 {
            for j in 0..9 {
                direct += pp[i] * qq[j] * quadratic_drift(g.point(i), g.point(j));
            }
        }
        assert_abs_diff_eq!(pair_drift_mean(&p, &q), direct, epsilon = 1e-12);
    }

    #[test]
    fn drift_diagonal_identity() {
        let m = make_preset("gaussian-ar", &PresetParams::new().with("alpha", 0.5)).unwrap();
        let g = Arc::new(build_grid(-8.0, 8.0, 401, false).unwrap());
        let p = SmoothingPipeline::new(&m, g.clone(), vec![0.5, -1.0, 0.2, 1.1]).unwrap();
        let k = p.forward_kernel(1).unwrap();
        let d = index_drift(&k, &g, &CouplingSetSpec::Empty).unwrap();
        // With no coupling set every diagonal pair counts: F V(x,x) = 1 + 2 gamma^2.
        let (_, _, g2) = crate::smoothing::gaussian_forward_affine(
            &GaussianARParams::new(0.5, 1.0, 1.0).unwrap(),
            &crate::smoothing::gaussian_backward_params(&GaussianARParams::new(0.5, 1.0, 1.0).unwrap(), &[0.5, -1.0, 0.2, 1.1]).unwrap(),
            1,
        );
        assert!(d.lambda >= 1.0 + 2.0 * g2 - 1e-6);
        assert_eq!(d.rho_set, 0.0);
    }

    #[test]
    fn varsu_cases() {
        let std = varsu_check(|x| -0.5 * x * x, 1.0, -12.0, 12.0).unwrap();
        assert_abs_diff_eq!(std.variance, 1.0, epsilon = 1e-6);
        assert!(std.pass);
        let narrow = varsu_check(|x| -2.0 * x * x, 4.0, -6.0, 6.0).unwrap();
        assert_abs_diff_eq!(narrow.variance, 0.25, epsilon = 1e-6);
        assert!(narrow.pass);
        let quartic = varsu_check(|x| -0.5 * x * x - x.powi(4), 1.0, -6.0, 6.0).unwrap();
        assert!(quartic.pass && quartic.variance < 1.0 - 0.1);
        assert!(matches!(varsu_check(|x| -x.abs(), 1.0, -5.0, 5.0), Err(Error::Inapplicable(_))));
    }

    #[test]
    fn unimodal_gaussian_constant() {
        let m = make_preset("gaussian-ar", &PresetParams::new().with("alpha", 0.7)).unwrap();
        let g = Arc::new(build_grid(-8.0, 8.0, 801, false).unwrap());
        let p = SmoothingPipeline::new(&m, g, vec![0.3, 1.0, -0.4, 0.8, 0.0]).unwrap();
        let r = unimodal_kernel_checks(&p, 1e-3).unwrap();
        assert_abs_diff_eq!(r.c, 2.0, epsilon = 1e-12);
        assert!(r.pass(), "{r:?}");
        let zero = make_preset("gaussian-ar", &PresetParams::new().with("alpha", 0.0)).unwrap();
        let g = Arc::new(build_grid(-8.0, 8.0, 401, false).unwrap());
        let p = SmoothingPipeline::new(&zero, g, vec![0.3, 1.0, -0.4]).unwrap();
        let r = unimodal_kernel_checks(&p, 1e-3).unwrap();
        assert!(r.max_mean_slope < 1e-9 && r.pass());
    }

    proptest! {
        #[test]
        fn sandwich_holds(rows in prop::collection::vec(0.01f64..1.0, 16), mask in prop::collection::vec(any::<bool>(), 4)) {
            prop_assume!(mask.iter().any(|b| *b));
            let k = KernelMatrix::from_rows(4, rows).unwrap();
            let s = strong_small_constants(&k, &mask).unwrap();
            prop_assert!(s.sigma_minus <= 1.0 + 1e-12 && s.sigma_plus >= 1.0 - 1e-12);
            for i in (0..4).filter(|&i| mask[i]) {
                for t in 0..4 {
                    prop_assert!(s.sigma_minus * s.nu[t] <= k.entry(i, t) * (1.0 + 1e-12));
                    prop_assert!(k.entry(i, t) <= s.sigma_plus * s.nu[t] * (1.0 + 1e-12));
                }
            }
        }

        #[test]
        fn small_set_floor_on_random_kernels(rows in prop::collection::vec(0.01f64..1.0, 25), mask in prop::collection::vec(any::<bool>(), 5)) {
            prop_assume!(mask.iter().any(|b| *b));
            let g = build_grid(0.0, 4.0, 5, false).unwrap();
            let k = KernelMatrix::from_rows(5, rows).unwrap();
            let s = strong_small_constants(&k, &mask).unwrap();
            let eps = set_coupling_constant(&k, &g, &CouplingSetSpec::Product { mask: mask.clone() }, 8192);
            prop_assert!(eps >= s.ratio() - FLOOR_SLACK);
        }

        #[test]
        fn amn_min_not_above_any_m(eps in prop::collection::vec(0.0f64..1.0, 1..20), lam in 0.05f64..0.99, b in 1.0f64..5.0, v0 in 1.0f64..50.0) {
            let n = eps.len();
            let mut s = constant_spec(n, 0.0, lam, b);
            s.epsilon = eps;
            let scan = amn_scan(&s, v0);
            prop_assert!(scan.values.iter().all(|v| *v >= scan.min));
            prop_assert!(scan.min >= 0.0);
            prop_assert_eq!(scan.values[scan.argmin - 1], scan.min);
        }
    }
}
