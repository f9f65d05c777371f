//! Coupling of two copies of the conditional chain: coupling constants of
//! sets, minorizing and residual kernels, the coupled chain with its bell
//! variable, and the Lindvall tail check.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{tv_distance, Grid, KernelMatrix, ProbVector};
use crate::rng::{replicate_rng, sample_index};
use crate::smoothing::SmoothingPipeline;

/// Default cap on the number of grid pairs scanned for an infimum.
pub const DEFAULT_PAIR_BUDGET: usize = 8192;

/// Negative residual entries above this magnitude are an error.
const RESIDUAL_TOLERANCE: f64 = 1e-12;

/// A set of state pairs where the chains may couple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CouplingSetSpec {
    FullSpace,
    /// `C × C` for a grid mask `C`.
    Product { mask: Vec<bool> },
    /// `{|x - x'| <= c}`.
    Tube { c: f64 },
    Empty,
    /// One set per block index; the last entry is reused past the end.
    PerIndex { sets: Vec<CouplingSetSpec> },
}

impl CouplingSetSpec {
    pub fn at(&self, k: usize) -> &CouplingSetSpec {
        match self {
            CouplingSetSpec::PerIndex { sets } => sets.get(k).or(sets.last()).unwrap_or(&CouplingSetSpec::Empty).at(k),
            other => other,
        }
    }

    pub fn contains(&self, grid: &Grid, i: usize, j: usize) -> bool {
        match self {
            CouplingSetSpec::FullSpace => true,
            CouplingSetSpec::Product { mask } => mask[i] && mask[j],
            CouplingSetSpec::Tube { c } => grid.distance(grid.point(i), grid.point(j)) <= c + 1e-9 * grid.step(),
            CouplingSetSpec::Empty => false,
            CouplingSetSpec::PerIndex { .. } => panic!("resolve a per-index set with `at` first"),
        }
    }
}

/// Evenly spread subset of `items` of size at most `count`, always keeping
/// the first and last element.
fn stratified<T: Copy>(items: &[T], count: usize) -> Vec<T> {
    if items.len() <= count {
        return items.to_vec();
    }
    let count = count.max(2);
    let last = items.len() - 1;
    (0..count).map(|t| items[t * last / (count - 1)]).collect()
}

/// Off-diagonal candidate pairs `(i, j)` of `set` among valid rows, at most
/// about `budget` of them. Exhaustive when the set is small enough.
pub fn candidate_pairs(grid: &Grid, valid: &[bool], set: &CouplingSetSpec, budget: usize) -> Vec<(usize, usize)> {
    let n = grid.len();
    let rows: Vec<usize> = (0..n).filter(|&i| valid[i]).collect();
    match set {
        CouplingSetSpec::Empty => Vec::new(),
        CouplingSetSpec::PerIndex { .. } => panic!("resolve a per-index set with `at` first"),
        CouplingSetSpec::FullSpace | CouplingSetSpec::Product { .. } => {
            let members: Vec<usize> = match set {
                CouplingSetSpec::Product { mask } => rows.iter().copied().filter(|&i| mask[i]).collect(),
                _ => rows,
            };
            let keep = ((2 * budget) as f64).sqrt().floor() as usize;
            let chosen = stratified(&members, keep.max(2));
            let mut out = Vec::new();
            for (a, &i) in chosen.iter().enumerate() {
                for &j in &chosen[a + 1..] {
                    out.push((i, j));
                }
            }
            out
        }
        CouplingSetSpec::Tube { c } => {
            let max_off = (c / grid.step() + 1e-9).floor() as usize;
            let max_off = if grid.is_wraparound() { max_off.min(n / 2) } else { max_off.min(n - 1) };
            if max_off == 0 {
                return Vec::new();
            }
            let pair = |i: usize, d: usize| -> Option<(usize, usize)> {
                let j = if grid.is_wraparound() { (i + d) % n } else { i + d };
                (j < n && valid[j] && i != j).then_some((i, j))
            };
            let mut out: Vec<(usize, usize)> = rows.iter().filter_map(|&i| pair(i, max_off)).collect();
            if out.len() > budget / 2 {
                out = stratified(&out, budget / 2);
            }
            let offsets: Vec<usize> = (1..max_off).collect();
            let offsets = stratified(&offsets, 8);
            if !offsets.is_empty() {
                let per = (budget / 2 / offsets.len()).max(2);
                for d in offsets {
                    let these: Vec<(usize, usize)> = rows.iter().filter_map(|&i| pair(i, d)).collect();
                    out.extend(stratified(&these, per));
                }
            }
            out
        }
    }
}

/// `sum_t min(K(i,t), K(j,t))`.
pub fn pair_overlap(kernel: &KernelMatrix, i: usize, j: usize) -> f64 {
    if i == j && kernel.is_valid(i) {
        return 1.0;
    }
    kernel.row_overlap(i, j)
}

/// Coupling constant `inf_{(x,x') in C} (K(x,·) ∧ K(x',·))(X)` with the inf
/// over grid pairs. Empty sets give 1 (vacuous infimum) with a warning.
pub fn set_coupling_constant(kernel: &KernelMatrix, grid: &Grid, set: &CouplingSetSpec, budget: usize) -> f64 {
    let set = set.at(0);
    let any_member = match set {
        CouplingSetSpec::Empty => false,
        CouplingSetSpec::Product { mask } => mask.iter().zip(kernel.valid_mask()).any(|(a, b)| *a && *b),
        _ => true,
    };
    if !any_member {
        log::warn!("coupling constant of an empty set: using the vacuous value 1");
        return 1.0;
    }
    let pairs = candidate_pairs(grid, kernel.valid_mask(), set, budget);
    pairs
        .par_iter()
        .map(|&(i, j)| pair_overlap(kernel, i, j))
        .reduce(|| 1.0, f64::min)
}

/// `epsilon_{k,m|n}(C)` computed on the skeleton.
pub fn coupling_constant(pipeline: &SmoothingPipeline, k: usize, m: usize, set: &CouplingSetSpec) -> Result<f64> {
    let kern = pipeline.skeleton(k, m)?;
    Ok(set_coupling_constant(&kern, pipeline.grid(), set.at(k), DEFAULT_PAIR_BUDGET))
}

/// Normalized pointwise minimum of rows `i` and `j`.
pub fn minorizing_row(kernel: &KernelMatrix, i: usize, j: usize) -> Result<Vec<f64>> {
    let ov = pair_overlap(kernel, i, j);
    if ov <= 0.0 {
        return Err(Error::ZeroOverlap(i, j));
    }
    let (a, b) = (kernel.row(i), kernel.row(j));
    Ok(a.iter().zip(b).map(|(p, q)| p.min(*q) / ov).collect())
}

/// Residual `(K(i,·) - eps nu(i,j;·)) / (1 - eps)`, as the pair of marginals
/// of the product residual kernel.
pub fn residual_marginals(kernel: &KernelMatrix, i: usize, j: usize, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::param("epsilon", "residual needs 0 <= epsilon < 1"));
    }
    let (a, b) = (kernel.row(i), kernel.row(j));
    if eps == 0.0 {
        return Ok((a.to_vec(), b.to_vec()));
    }
    let nu = minorizing_row(kernel, i, j)?;
    let one = |row: &[f64]| -> Result<Vec<f64>> {
        row.iter()
            .zip(&nu)
            .map(|(r, v)| {
                let x = (r - eps * v) / (1.0 - eps);
                if x < -RESIDUAL_TOLERANCE {
                    Err(Error::NegativeResidual { value: x })
                } else {
                    Ok(x.max(0.0))
                }
            })
            .collect()
    };
    Ok((one(a)?, one(b)?))
}

pub fn minorizing_measure(pipeline: &SmoothingPipeline, k: usize, m: usize, i: usize, j: usize) -> Result<ProbVector> {
    let kern = pipeline.skeleton(k, m)?;
    ProbVector::from_weights(pipeline.grid().clone(), &minorizing_row(&kern, i, j)?)
}

/// Joint residual law over grid pairs, row-major `(x, x')`.
pub fn residual_kernel_step(
    pipeline: &SmoothingPipeline,
    k: usize,
    m: usize,
    i: usize,
    j: usize,
    eps: f64,
) -> Result<Vec<f64>> {
    let kern = pipeline.skeleton(k, m)?;
    let (a, b) = residual_marginals(&kern, i, j, eps)?;
    Ok(a.iter().flat_map(|p| b.iter().map(move |q| p * q)).collect())
}

/// One realization of the coupled chain `Z_i = (X_i, X'_i, d_i)`, stored as
/// grid indices; `coupling_time` is `None` for `T = inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrace {
    pub x: Vec<usize>,
    pub x_prime: Vec<usize>,
    pub d: Vec<bool>,
    pub coupling_time: Option<usize>,
    pub seed: u64,
    pub replicate: u64,
}

impl CouplingTrace {
    /// Tab-separated dump `i  x  x'  d`, one line per step.
    pub fn write_tsv(&self, grid: &Grid, mut w: impl Write) -> Result<()> {
        for i in 0..self.x.len() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                i,
                grid.point(self.x[i]),
                grid.point(self.x_prime[i]),
                u8::from(self.d[i])
            )?;
        }
        Ok(())
    }
}

/// Traces of one coupled run with the per-block coupling constants used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledRun {
    pub n: usize,
    pub m: usize,
    pub epsilons: Vec<f64>,
    pub traces: Vec<CouplingTrace>,
}

fn draw(weights: &[f64], window: (usize, usize), rng: &mut ChaCha8Rng) -> usize {
    let (a, b) = window;
    let slice = &weights[a..b];
    let total: f64 = slice.iter().sum();
    a + sample_index(slice, total, rng.random())
}

struct Walker {
    rng: ChaCha8Rng,
    trace: CouplingTrace,
}

impl Walker {
    fn step(&mut self, kern: &KernelMatrix, grid: &Grid, set: &CouplingSetSpec, eps_set: f64, block: usize) {
        let t = &mut self.trace;
        let (a, b, coupled) = (*t.x.last().unwrap(), *t.x_prime.last().unwrap(), *t.d.last().unwrap());
        let rng = &mut self.rng;
        let (na, nb, nd) = if coupled {
            let s = draw(kern.row(a), kern.window(a), rng);
            (s, s, true)
        } else if set.contains(grid, a, b) {
            let ov = pair_overlap(kern, a, b);
            let eps = eps_set.min(ov);
            let u: f64 = rng.random();
            if u < eps {
                let s = if a == b {
                    draw(kern.row(a), kern.window(a), rng)
                } else {
                    let (ra, rb) = (kern.row(a), kern.row(b));
                    let (wa, wb) = (kern.window(a), kern.window(b));
                    let lo = wa.0.max(wb.0);
                    let hi = wa.1.min(wb.1).max(lo);
                    let mins: Vec<f64> = (lo..hi).map(|t| ra[t].min(rb[t])).collect();
                    lo + sample_index(&mins, mins.iter().sum(), rng.random())
                };
                (s, s, true)
            } else {
                let scale = if ov > 0.0 { eps / ov } else { 0.0 };
                let residual = |row: &[f64], other: &[f64], w: (usize, usize), rng: &mut ChaCha8Rng| {
                    let r: Vec<f64> = (w.0..w.1)
                        .map(|t| (row[t] - scale * row[t].min(other[t])).max(0.0))
                        .collect();
                    w.0 + sample_index(&r, r.iter().sum(), rng.random())
                };
                let (ra, rb) = (kern.row(a), kern.row(b));
                let na = residual(ra, rb, kern.window(a), rng);
                let nb = residual(rb, ra, kern.window(b), rng);
                (na, nb, false)
            }
        } else {
            let na = draw(kern.row(a), kern.window(a), rng);
            let nb = draw(kern.row(b), kern.window(b), rng);
            (na, nb, false)
        };
        t.x.push(na);
        t.x_prime.push(nb);
        t.d.push(nd);
        if nd && t.coupling_time.is_none() {
            t.coupling_time = Some(block + 1);
        }
    }
}

/// Runs `replicates` coupled chains over the `floor(n/m)` blocks. All
/// replicates advance together so each skeleton is built once; replicate `r`
/// draws only from stream `r` of `seed`.
pub fn simulate_with_initial(
    pipeline: &SmoothingPipeline,
    m: usize,
    set: &CouplingSetSpec,
    replicates: usize,
    seed: u64,
    init: impl Fn(&mut ChaCha8Rng) -> (usize, usize) + Sync,
) -> Result<CoupledRun> {
    if m == 0 {
        return Err(Error::param("m", "must be >= 1"));
    }
    let n = pipeline.n();
    let blocks = n / m;
    if blocks == 0 {
        return Err(Error::param("m", "need floor(n/m) >= 1"));
    }
    let grid = pipeline.grid().clone();
    let mut walkers: Vec<Walker> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let (a, b) = init(&mut rng);
            Walker {
                rng,
                trace: CouplingTrace {
                    x: vec![a],
                    x_prime: vec![b],
                    d: vec![false],
                    coupling_time: None,
                    seed,
                    replicate: r,
                },
            }
        })
        .collect();
    let mut epsilons = Vec::with_capacity(blocks);
    for k in 0..blocks {
        let kern = pipeline.skeleton(k, m)?;
        let s = set.at(k);
        let eps = set_coupling_constant(&kern, &grid, s, DEFAULT_PAIR_BUDGET);
        epsilons.push(eps);
        walkers.par_iter_mut().for_each(|w| w.step(&kern, &grid, s, eps, k));
    }
    Ok(CoupledRun {
        n,
        m,
        epsilons,
        traces: walkers.into_iter().map(|w| w.trace).collect(),
    })
}

/// Coupled chains started independently from the index-0 smoothing marginals
/// of `xi` and `xi_prime`.
pub fn simulate_coupled(
    pipeline: &SmoothingPipeline,
    xi: &ProbVector,
    xi_prime: &ProbVector,
    m: usize,
    set: &CouplingSetSpec,
    replicates: usize,
    seed: u64,
) -> Result<CoupledRun> {
    let p0 = pipeline.smoothing_marginal(xi, 0)?.probs();
    let q0 = pipeline.smoothing_marginal(xi_prime, 0)?.probs();
    simulate_with_initial(pipeline, m, set, replicates, seed, |rng| {
        let a = sample_index(&p0, 1.0, rng.random());
        let b = sample_index(&q0, 1.0, rng.random());
        (a, b)
    })
}

/// Coupled chains started on the diagonal `X_0 = X'_0 ~ phi_{xi,0|n}`.
pub fn simulate_coupled_diagonal(
    pipeline: &SmoothingPipeline,
    xi: &ProbVector,
    m: usize,
    set: &CouplingSetSpec,
    replicates: usize,
    seed: u64,
) -> Result<CoupledRun> {
    let p0 = pipeline.smoothing_marginal(xi, 0)?.probs();
    simulate_with_initial(pipeline, m, set, replicates, seed, |rng| {
        let a = sample_index(&p0, 1.0, rng.random());
        (a, a)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    /// Sample proportion of traces with `T >= floor(n/m)`.
    pub p_hat: f64,
    /// Binomial standard error with a half-count continuity correction, so a
    /// zero count still carries uncertainty.
    pub se: f64,
    pub count: usize,
    pub replicates: usize,
}

pub fn estimate_tail(traces: &[CouplingTrace], n: usize, m: usize) -> Result<TailEstimate> {
    if traces.is_empty() {
        return Err(Error::EmptySet("no coupling traces".into()));
    }
    if m == 0 {
        return Err(Error::param("m", "must be >= 1"));
    }
    let threshold = n / m;
    let count = traces
        .iter()
        .filter(|t| t.coupling_time.is_none_or(|c| c >= threshold))
        .count();
    let r = traces.len();
    let p_hat = count as f64 / r as f64;
    let pt = (count as f64 + 0.5) / (r as f64 + 1.0);
    Ok(TailEstimate {
        p_hat,
        se: (pt * (1.0 - pt) / r as f64).sqrt(),
        count,
        replicates: r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LindvallResult {
    pub tv_measured: f64,
    pub tail: TailEstimate,
    pub pass: bool,
}

/// Compares the grid TV between the index-`n` smoothing marginals with the
/// simulated tail `P(T >= floor(n/m))`.
pub fn lindvall_check(
    pipeline: &SmoothingPipeline,
    xi: &ProbVector,
    xi_prime: &ProbVector,
    m: usize,
    set: &CouplingSetSpec,
    replicates: usize,
    seed: u64,
) -> Result<LindvallResult> {
    if replicates < 100 {
        return Err(Error::param("replicates", "need at least 100"));
    }
    let n = pipeline.n();
    let tv = tv_distance(&pipeline.smoothing_marginal(xi, n)?, &pipeline.smoothing_marginal(xi_prime, n)?)?;
    let run = simulate_coupled(pipeline, xi, xi_prime, m, set, replicates, seed)?;
    let tail = estimate_tail(&run.traces, n, m)?;
    Ok(LindvallResult {
        tv_measured: tv,
        tail,
        pass: tv <= tail.p_hat + 3.0 * tail.se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::model::{make_preset, PresetParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn two_state_pipeline(n: usize) -> SmoothingPipeline {
        let m = make_preset("discrete", &PresetParams::new().with("informative", false)).unwrap();
        let g = Arc::new(m.default_grid().unwrap());
        SmoothingPipeline::new(&m, g, vec![0.0; n + 1]).unwrap()
    }

    #[test]
    fn two_state_constants() {
        let p = two_state_pipeline(3);
        let eps = coupling_constant(&p, 0, 1, &CouplingSetSpec::FullSpace).unwrap();
        assert_abs_diff_eq!(eps, 0.8, epsilon = 1e-15);
        let nu = minorizing_measure(&p, 0, 1, 0, 1).unwrap().probs();
        assert_abs_diff_eq!(nu[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(nu[1], 0.5, epsilon = 1e-15);
        let k = p.forward_kernel(0).unwrap();
        let (ra, rb) = residual_marginals(&k, 0, 1, 0.8).unwrap();
        assert_abs_diff_eq!(ra[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ra[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rb[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rb[1], 1.0, epsilon = 1e-12);
        let joint = residual_kernel_step(&p, 0, 1, 0, 1, 0.8).unwrap();
        assert_abs_diff_eq!(joint[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_and_empty_sets() {
        let p = two_state_pipeline(3);
        assert_eq!(coupling_constant(&p, 0, 1, &CouplingSetSpec::Tube { c: 0.0 }).unwrap(), 1.0);
        assert_eq!(coupling_constant(&p, 0, 1, &CouplingSetSpec::Empty).unwrap(), 1.0);
        let nu = minorizing_measure(&p, 0, 1, 1, 1).unwrap().probs();
        assert_abs_diff_eq!(nu[1], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn residual_rejects_excess_epsilon() {
        let p = two_state_pipeline(2);
        let k = p.forward_kernel(0).unwrap();
        assert!(matches!(residual_marginals(&k, 0, 1, 0.9), Err(Error::NegativeResidual { .. })));
        let (ra, rb) = residual_marginals(&k, 0, 1, 0.0).unwrap();
        assert_eq!(ra, k.row(0));
        assert_eq!(rb, k.row(1));
    }

    #[test]
    fn mixture_identity() {
        let m = make_preset("gaussian-ar", &PresetParams::new()).unwrap();
        let grid = Arc::new(build_grid(-8.0, 8.0, 401, false).unwrap());
        let p = SmoothingPipeline::new(&m, grid, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let k = p.forward_kernel(1).unwrap();
        let (i, j) = (180, 215);
        let eps = 0.9 * pair_overlap(&k, i, j);
        let nu = minorizing_row(&k, i, j).unwrap();
        let (ra, rb) = residual_marginals(&k, i, j, eps).unwrap();
        for t in 0..k.size() {
            assert!((eps * nu[t] + (1.0 - eps) * ra[t] - k.entry(i, t)).abs() < 1e-15);
            assert!((eps * nu[t] + (1.0 - eps) * rb[t] - k.entry(j, t)).abs() < 1e-15);
        }
        assert_abs_diff_eq!(nu.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ra.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn diagonal_start_couples_at_one() {
        let p = two_state_pipeline(5);
        let xi = ProbVector::from_weights(p.grid().clone(), &[0.5, 0.5]).unwrap();
        let run = simulate_coupled_diagonal(&p, &xi, 1, &CouplingSetSpec::Tube { c: 0.0 }, 50, 9).unwrap();
        for t in &run.traces {
            assert_eq!(t.coupling_time, Some(1));
        }
    }

    #[test]
    fn empty_set_never_couples() {
        let p = two_state_pipeline(6);
        let grid = p.grid().clone();
        let xi = ProbVector::point_mass(grid.clone(), 0).unwrap();
        let xi2 = ProbVector::point_mass(grid, 1).unwrap();
        let run = simulate_coupled(&p, &xi, &xi2, 1, &CouplingSetSpec::Empty, 200, 1).unwrap();
        assert!(run.traces.iter().all(|t| t.coupling_time.is_none() && t.d.iter().all(|d| !d)));
        let tail = estimate_tail(&run.traces, 6, 1).unwrap();
        assert_eq!(tail.p_hat, 1.0);
    }

    #[test]
    fn tail_estimate_edges() {
        let mk = |c: Option<usize>| CouplingTrace {
            x: vec![],
            x_prime: vec![],
            d: vec![],
            coupling_time: c,
            seed: 0,
            replicate: 0,
        };
        let all_one: Vec<_> = (0..10).map(|_| mk(Some(1))).collect();
        assert_eq!(estimate_tail(&all_one, 4, 1).unwrap().p_hat, 0.0);
        assert!(estimate_tail(&all_one, 4, 1).unwrap().se > 0.0);
        let none: Vec<_> = (0..10).map(|_| mk(None)).collect();
        assert_eq!(estimate_tail(&none, 4, 1).unwrap().p_hat, 1.0);
        assert!(estimate_tail(&[], 4, 1).is_err());
    }

    #[test]
    fn traces_are_reproducible_per_replicate() {
        let m = make_preset("gaussian-ar", &PresetParams::new()).unwrap();
        let grid = Arc::new(build_grid(-10.0, 10.0, 301, false).unwrap());
        let p = SmoothingPipeline::new(&m, grid.clone(), vec![0.0, 1.0, -1.0, 0.5, 0.0]).unwrap();
        let xi = ProbVector::point_mass(grid.clone(), 100).unwrap();
        let xi2 = ProbVector::point_mass(grid, 200).unwrap();
        let set = CouplingSetSpec::Tube { c: 2.0 };
        let a = simulate_coupled(&p, &xi, &xi2, 1, &set, 40, 17).unwrap();
        let b = simulate_coupled(&p, &xi, &xi2, 1, &set, 25, 17).unwrap();
        assert_eq!(&a.traces[..25], &b.traces[..]);
        for t in &a.traces {
            for w in t.d.windows(2) {
                assert!(!w[0] || w[1]);
            }
            for i in 0..t.d.len() {
                if t.d[i] {
                    assert_eq!(t.x[i], t.x_prime[i]);
                }
            }
            let first = t.d.iter().position(|d| *d);
            assert_eq!(first, t.coupling_time);
        }
    }

    #[test]
    fn trace_dump_format() {
        let grid = build_grid(0.0, 1.0, 2, false).unwrap();
        let t = CouplingTrace {
            x: vec![0, 1],
            x_prime: vec![1, 1],
            d: vec![false, true],
            coupling_time: Some(1),
            seed: 0,
            replicate: 0,
        };
        let mut buf = Vec::new();
        t.write_tsv(&grid, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0\t0\t1\t0\n1\t1\t1\t1\n");
    }

    #[test]
    fn tube_candidates_respect_width() {
        let grid = build_grid(0.0, 10.0, 101, false).unwrap();
        let valid = vec![true; 101];
        let pairs = candidate_pairs(&grid, &valid, &CouplingSetSpec::Tube { c: 1.0 }, 8192);
        assert!(pairs.iter().all(|&(i, j)| (grid.point(i) - grid.point(j)).abs() <= 1.0 + 1e-9));
        assert!(pairs.iter().any(|&(i, j)| j - i == 10));
        let circle = build_grid(0.0, 2.0 * std::f64::consts::PI, 64, true).unwrap();
        let pairs = candidate_pairs(&circle, &vec![true; 64], &CouplingSetSpec::Tube { c: 0.5 }, 8192);
        assert!(pairs.iter().any(|&(i, j)| i > j));
    }

    fn random_kernel() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 25).prop_filter("rows", |v| v.chunks(5).all(|r| r.iter().sum::<f64>() > 0.1))
    }

    proptest! {
        #[test]
        fn coupling_constant_monotone(rows in random_kernel(), c1 in 0.0f64..4.0, c2 in 0.0f64..4.0, mask in prop::collection::vec(any::<bool>(), 5)) {
            let grid = build_grid(0.0, 4.0, 5, false).unwrap();
            let k = KernelMatrix::from_rows(5, rows).unwrap();
            let (lo, hi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
            let small = set_coupling_constant(&k, &grid, &CouplingSetSpec::Tube { c: lo }, 8192);
            let big = set_coupling_constant(&k, &grid, &CouplingSetSpec::Tube { c: hi }, 8192);
            prop_assert!(small >= big - 1e-15);
            let prod = set_coupling_constant(&k, &grid, &CouplingSetSpec::Product { mask }, 8192);
            let full = set_coupling_constant(&k, &grid, &CouplingSetSpec::FullSpace, 8192);
            prop_assert!(prod >= full - 1e-15);
        }

        #[test]
        fn mixture_identity_random(rows in random_kernel(), i in 0usize..5, j in 0usize..5, frac in 0.0f64..0.999) {
            let k = KernelMatrix::from_rows(5, rows).unwrap();
            let ov = pair_overlap(&k, i, j);
            prop_assume!(ov > 1e-6 && ov < 1.0);
            let eps = frac * ov;
            let nu = minorizing_row(&k, i, j).unwrap();
            let (ra, rb) = residual_marginals(&k, i, j, eps).unwrap();
            for t in 0..5 {
                prop_assert!((eps * nu[t] + (1.0 - eps) * ra[t] - k.entry(i, t)).abs() < 1e-12);
                prop_assert!((eps * nu[t] + (1.0 - eps) * rb[t] - k.entry(j, t)).abs() < 1e-12);
            }
        }
    }
}
