//! HMM model families, noise densities, presets and path sampling.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid, discretize_log_density, wrap_angle, Grid, KernelMatrix, ProbVector};
use crate::rng::{path_rng, sample_index};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub const PRESET_NAMES: [&str; 6] = [
    "gaussian-ar",
    "bounded-noise",
    "functional-ar",
    "discrete",
    "counterexample-parity",
    "counterexample-circle",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianARParams {
    pub alpha: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl GaussianARParams {
    pub fn new(alpha: f64, sigma: f64, tau: f64) -> Result<Self> {
        if !(alpha.abs() < 1.0) {
            return Err(Error::param("alpha", "|alpha| must be < 1"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param("sigma", "must be positive"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::param("tau", "must be positive"));
        }
        Ok(GaussianARParams { alpha, sigma, tau })
    }

    pub fn stationary_sd(&self) -> f64 {
        self.sigma / (1.0 - self.alpha * self.alpha).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    Laplace,
    Logistic,
    Cauchy,
    Uniform,
    Triangular,
}

impl NoiseKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "gaussian" | "normal" => NoiseKind::Gaussian,
            "laplace" => NoiseKind::Laplace,
            "logistic" => NoiseKind::Logistic,
            "cauchy" => NoiseKind::Cauchy,
            "uniform" => NoiseKind::Uniform,
            "triangular" => NoiseKind::Triangular,
            other => return Err(Error::param("noise", format!("unknown noise family {other:?}"))),
        })
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Laplace => "laplace",
            NoiseKind::Logistic => "logistic",
            NoiseKind::Cauchy => "cauchy",
            NoiseKind::Uniform => "uniform",
            NoiseKind::Triangular => "triangular",
        };
        f.write_str(s)
    }
}

/// A symmetric noise density `p(|u|)`. For the bounded kinds `scale` is the
/// support half-width `M`; otherwise it is the usual scale parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDensity {
    pub kind: NoiseKind,
    pub scale: f64,
}

impl NoiseDensity {
    pub fn new(kind: NoiseKind, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::param("scale", "noise scale must be positive"));
        }
        Ok(NoiseDensity { kind, scale })
    }

    pub fn log_pdf(&self, u: f64) -> f64 {
        let s = self.scale;
        let a = u.abs();
        match self.kind {
            NoiseKind::Gaussian => -0.5 * (u / s).powi(2) - s.ln() - 0.5 * LN_2PI,
            NoiseKind::Laplace => -a / s - (2.0 * s).ln(),
            NoiseKind::Logistic => {
                let z = -a / s;
                z - s.ln() - 2.0 * z.exp().ln_1p()
            }
            NoiseKind::Cauchy => -(PI * s).ln() - (u / s).powi(2).ln_1p(),
            NoiseKind::Uniform => {
                if a < s {
                    -(2.0 * s).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            NoiseKind::Triangular => {
                if a < s {
                    (s - a).ln() - 2.0 * s.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn pdf(&self, u: f64) -> f64 {
        self.log_pdf(u).exp()
    }

    /// Support bound `M`: the density vanishes for `|u| >= M`.
    pub fn support_bound(&self) -> f64 {
        match self.kind {
            NoiseKind::Uniform | NoiseKind::Triangular => self.scale,
            _ => f64::INFINITY,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.support_bound().is_finite()
    }

    /// Every supported kind is non-increasing in `|u|` from the origin.
    pub fn monotone_tail(&self) -> bool {
        true
    }

    /// `inf p(a+b) / (p(a) p(b))` over `a, b >= 0`, when positive.
    pub fn gamma(&self) -> Option<f64> {
        let s = self.scale;
        match self.kind {
            NoiseKind::Laplace => Some(2.0 * s),
            NoiseKind::Logistic => Some(s),
            NoiseKind::Cauchy => Some(0.75 * PI * s),
            _ => None,
        }
    }

    /// Second derivative of `log p` at `u` (for `u` in the support).
    pub fn log_curvature(&self, u: f64) -> f64 {
        let s = self.scale;
        match self.kind {
            NoiseKind::Gaussian => -1.0 / (s * s),
            NoiseKind::Laplace | NoiseKind::Uniform => 0.0,
            NoiseKind::Logistic => {
                let e = (-u.abs() / s).exp();
                -2.0 * e / (s * s * (1.0 + e).powi(2))
            }
            NoiseKind::Cauchy => {
                let z2 = (u / s).powi(2);
                -2.0 * (1.0 - z2) / (s * s * (1.0 + z2).powi(2))
            }
            NoiseKind::Triangular => -1.0 / (s - u.abs()).powi(2),
        }
    }

    pub fn is_log_concave(&self) -> bool {
        matches!(
            self.kind,
            NoiseKind::Gaussian | NoiseKind::Laplace | NoiseKind::Logistic | NoiseKind::Uniform | NoiseKind::Triangular
        )
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let s = self.scale;
        match self.kind {
            NoiseKind::Gaussian => Normal::new(0.0, s).expect("positive scale").sample(rng),
            NoiseKind::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -s * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseKind::Logistic => {
                let u: f64 = open_unit(rng);
                s * (u / (1.0 - u)).ln()
            }
            NoiseKind::Cauchy => s * (PI * (open_unit(rng) - 0.5)).tan(),
            NoiseKind::Uniform => s * (2.0 * open_unit(rng) - 1.0),
            NoiseKind::Triangular => s * (open_unit(rng) - open_unit(rng)),
        }
    }
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Drift map `a(x) = a1 x + a2 sin(x)`, Lipschitz with `|a1| + |a2|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftMap {
    pub linear: f64,
    pub sine: f64,
}

impl DriftMap {
    pub fn eval(&self, x: f64) -> f64 {
        self.linear * x + self.sine * x.sin()
    }

    pub fn lipschitz(&self) -> f64 {
        self.linear.abs() + self.sine.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalARParams {
    pub drift: DriftMap,
    pub a_plus: f64,
    /// Slope of the observation map `b(x) = b x`.
    pub obs_slope: f64,
    pub b_minus: f64,
    pub b_plus: f64,
    pub state_noise: NoiseDensity,
    pub obs_noise: NoiseDensity,
}

impl FunctionalARParams {
    pub fn new(drift: DriftMap, obs_slope: f64, state_noise: NoiseDensity, obs_noise: NoiseDensity) -> Result<Self> {
        if obs_slope == 0.0 || !obs_slope.is_finite() {
            return Err(Error::param("b", "observation map must be one-to-one"));
        }
        Ok(FunctionalARParams {
            drift,
            a_plus: drift.lipschitz(),
            obs_slope,
            b_minus: obs_slope.abs(),
            b_plus: obs_slope.abs(),
            state_noise,
            obs_noise,
        })
    }

    pub fn b(&self, x: f64) -> f64 {
        self.obs_slope * x
    }

    pub fn b_inverse(&self, y: f64) -> f64 {
        y / self.obs_slope
    }
}

/// A finite-state HMM: row-stochastic transition table and an emission table
/// over integer symbols (`None` means `g = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteParams {
    pub states: usize,
    pub transition: Vec<f64>,
    pub symbols: usize,
    pub emission: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelFamily {
    GaussianAr(GaussianARParams),
    /// Gaussian AR state observed as `Y = X + V` with bounded `V`.
    BoundedNoise { alpha: f64, sigma: f64, obs_noise: NoiseDensity },
    FunctionalAr(FunctionalARParams),
    Discrete(DiscreteParams),
    /// Pairs `(X_{i-1}, X_i)` of i.i.d. fair bits encoded as `2a + b`;
    /// `Y_i = 1{X_i = X_{i-1}}`.
    CounterexampleParity,
    /// Random walk on the circle with uniform steps; `Y = X + shift W + V`.
    CounterexampleCircle { half_width: f64, shift: f64 },
}

impl ModelFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelFamily::GaussianAr(_) => "gaussian-ar",
            ModelFamily::BoundedNoise { .. } => "bounded-noise",
            ModelFamily::FunctionalAr(_) => "functional-ar",
            ModelFamily::Discrete(_) => "discrete",
            ModelFamily::CounterexampleParity => "counterexample-parity",
            ModelFamily::CounterexampleCircle { .. } => "counterexample-circle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub state_dim: usize,
}

/// Prior on the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSpec {
    Gaussian { mean: f64, sd: f64 },
    Point { x: f64 },
    Weights { weights: Vec<f64> },
    Uniform,
}

impl PriorSpec {
    /// Parses `normal:MEAN:SD`, `point:X`, `weights:W0,W1,...` or `uniform`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {t:?} in prior {s:?}")))
        };
        match parts.as_slice() {
            ["normal" | "gaussian", m, sd] => {
                let sd = num(sd)?;
                if !(sd > 0.0) {
                    return Err(Error::Config(format!("prior sd must be positive in {s:?}")));
                }
                Ok(PriorSpec::Gaussian { mean: num(m)?, sd })
            }
            ["point", x] => Ok(PriorSpec::Point { x: num(x)? }),
            ["weights", w] => Ok(PriorSpec::Weights {
                weights: w.split(',').map(num).collect::<Result<_>>()?,
            }),
            ["uniform"] => Ok(PriorSpec::Uniform),
            _ => Err(Error::Config(format!("cannot parse prior {s:?}"))),
        }
    }

    pub fn to_prob_vector(&self, grid: std::sync::Arc<Grid>) -> Result<ProbVector> {
        match self {
            PriorSpec::Gaussian { mean, sd } => {
                let logs = grid.points().iter().map(|x| -0.5 * ((x - mean) / sd).powi(2)).collect();
                ProbVector::from_log_unnormalized(grid, logs)
            }
            PriorSpec::Point { x } => {
                let i = grid.nearest_index(*x);
                ProbVector::point_mass(grid, i)
            }
            PriorSpec::Weights { weights } => ProbVector::from_weights(grid, weights),
            PriorSpec::Uniform => {
                let n = grid.len();
                ProbVector::from_weights(grid, &vec![1.0; n])
            }
        }
    }

    /// Second moment `∫ x² ξ(dx)` for parametric priors.
    pub fn second_moment(&self) -> Option<f64> {
        match self {
            PriorSpec::Gaussian { mean, sd } => Some(mean * mean + sd * sd),
            PriorSpec::Point { x } => Some(x * x),
            _ => None,
        }
    }
}

/// String-valued preset parameters, parsed on access.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PresetParams(pub BTreeMap<String, String>);

impl PresetParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::param(key, format!("not a number: {v:?}"))),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.0.get(key).map(|s| s.as_str()).unwrap_or(default)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.0.get(key).map(|s| s.as_str()) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(Error::param(key, format!("not a boolean: {v:?}"))),
        }
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.0.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::param(k, format!("unknown parameter (expected one of {allowed:?})")));
            }
        }
        Ok(())
    }
}

/// Parameter names and defaults of every preset, for listings.
pub fn preset_parameters(name: &str) -> Option<&'static [(&'static str, &'static str)]> {
    Some(match name {
        "gaussian-ar" => &[("alpha", "0.9"), ("sigma", "1"), ("tau", "1")],
        "bounded-noise" => &[("alpha", "0.5"), ("sigma", "1"), ("m", "0.5"), ("noise", "uniform")],
        "functional-ar" => &[
            ("a1", "0.5"),
            ("a2", "0"),
            ("b", "1"),
            ("state_noise", "laplace"),
            ("state_scale", "1"),
            ("obs_noise", "gaussian"),
            ("obs_scale", "1"),
        ],
        "discrete" => &[("p", "0.6"), ("e0", "0.8"), ("e1", "0.7"), ("informative", "true")],
        "counterexample-parity" => &[],
        "counterexample-circle" => &[("half_width", "0.1"), ("shift", "3.141592653589793")],
        _ => return None,
    })
}

pub fn make_preset(name: &str, params: &PresetParams) -> Result<ModelSpec> {
    let keys: Vec<&str> = preset_parameters(name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))?
        .iter()
        .map(|(k, _)| *k)
        .collect();
    params.check_keys(&keys)?;
    let family = match name {
        "gaussian-ar" => ModelFamily::GaussianAr(GaussianARParams::new(
            params.f64_or("alpha", 0.9)?,
            params.f64_or("sigma", 1.0)?,
            params.f64_or("tau", 1.0)?,
        )?),
        "bounded-noise" => {
            let g = GaussianARParams::new(params.f64_or("alpha", 0.5)?, params.f64_or("sigma", 1.0)?, 1.0)?;
            let kind = NoiseKind::parse(params.str_or("noise", "uniform"))?;
            let obs_noise = NoiseDensity::new(kind, params.f64_or("m", 0.5)?)?;
            if !obs_noise.is_bounded() {
                return Err(Error::param("noise", "bounded-noise requires uniform or triangular noise"));
            }
            ModelFamily::BoundedNoise {
                alpha: g.alpha,
                sigma: g.sigma,
                obs_noise,
            }
        }
        "functional-ar" => {
            let drift = DriftMap {
                linear: params.f64_or("a1", 0.5)?,
                sine: params.f64_or("a2", 0.0)?,
            };
            let state_noise = NoiseDensity::new(
                NoiseKind::parse(params.str_or("state_noise", "laplace"))?,
                params.f64_or("state_scale", 1.0)?,
            )?;
            let obs_noise = NoiseDensity::new(
                NoiseKind::parse(params.str_or("obs_noise", "gaussian"))?,
                params.f64_or("obs_scale", 1.0)?,
            )?;
            if state_noise.is_bounded() {
                return Err(Error::param("state_noise", "state noise must have full support"));
            }
            ModelFamily::FunctionalAr(FunctionalARParams::new(drift, params.f64_or("b", 1.0)?, state_noise, obs_noise)?)
        }
        "discrete" => {
            let p = params.f64_or("p", 0.6)?;
            let e0 = params.f64_or("e0", 0.8)?;
            let e1 = params.f64_or("e1", 0.7)?;
            for (k, v) in [("p", p), ("e0", e0), ("e1", e1)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::param(k, "must be a probability"));
                }
            }
            let emission = params
                .bool_or("informative", true)?
                .then(|| vec![e0, 1.0 - e0, 1.0 - e1, e1]);
            ModelFamily::Discrete(DiscreteParams {
                states: 2,
                transition: vec![p, 1.0 - p, 1.0 - p, p],
                symbols: 2,
                emission,
            })
        }
        "counterexample-parity" => ModelFamily::CounterexampleParity,
        "counterexample-circle" => {
            let half_width = params.f64_or("half_width", 0.1)?;
            if !(half_width > 0.0 && half_width < PI / 2.0) {
                return Err(Error::param("half_width", "must lie in (0, pi/2)"));
            }
            ModelFamily::CounterexampleCircle {
                half_width,
                shift: params.f64_or("shift", PI)?,
            }
        }
        _ => unreachable!(),
    };
    Ok(ModelSpec { family, state_dim: 1 })
}

/// A sampled hidden path and its observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub states: Vec<f64>,
    pub observations: Vec<f64>,
}

impl ModelSpec {
    pub fn new(family: ModelFamily) -> Self {
        ModelSpec { family, state_dim: 1 }
    }

    pub fn name(&self) -> &'static str {
        self.family.tag()
    }

    pub fn gaussian_params(&self) -> Option<GaussianARParams> {
        match &self.family {
            ModelFamily::GaussianAr(p) => Some(*p),
            _ => None,
        }
    }

    /// Finite-state families live on the integer grid `0..S` and sample on it.
    pub fn is_finite_state(&self) -> bool {
        matches!(self.family, ModelFamily::Discrete(_) | ModelFamily::CounterexampleParity)
    }

    pub fn is_circle(&self) -> bool {
        matches!(self.family, ModelFamily::CounterexampleCircle { .. })
    }

    fn state_index(&self, x: f64) -> Option<usize> {
        let s = match &self.family {
            ModelFamily::Discrete(d) => d.states,
            ModelFamily::CounterexampleParity => 4,
            _ => return None,
        };
        let r = x.round();
        ((r - x).abs() < 1e-9 && r >= 0.0 && (r as usize) < s).then_some(r as usize)
    }

    /// `log q(x, x')`: density per unit state, or table log-probability for
    /// finite state spaces.
    pub fn log_transition(&self, x: f64, x_next: f64) -> f64 {
        match &self.family {
            ModelFamily::GaussianAr(p) => NoiseDensity {
                kind: NoiseKind::Gaussian,
                scale: p.sigma,
            }
            .log_pdf(x_next - p.alpha * x),
            ModelFamily::BoundedNoise { alpha, sigma, .. } => NoiseDensity {
                kind: NoiseKind::Gaussian,
                scale: *sigma,
            }
            .log_pdf(x_next - alpha * x),
            ModelFamily::FunctionalAr(p) => p.state_noise.log_pdf(x_next - p.drift.eval(x)),
            ModelFamily::Discrete(d) => match (self.state_index(x), self.state_index(x_next)) {
                (Some(i), Some(j)) => d.transition[i * d.states + j].ln(),
                _ => f64::NAN,
            },
            ModelFamily::CounterexampleParity => match (self.state_index(x), self.state_index(x_next)) {
                (Some(s), Some(t)) => {
                    if (s & 1) == (t >> 1) {
                        0.5f64.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                }
                _ => f64::NAN,
            },
            ModelFamily::CounterexampleCircle { half_width, .. } => NoiseDensity {
                kind: NoiseKind::Uniform,
                scale: *half_width,
            }
            .log_pdf(crate::grid::wrap_centered(x_next - x, 2.0 * PI)),
        }
    }

    /// `log g(x, y)`.
    pub fn log_observation(&self, x: f64, y: f64) -> f64 {
        match &self.family {
            ModelFamily::GaussianAr(p) => NoiseDensity {
                kind: NoiseKind::Gaussian,
                scale: p.tau,
            }
            .log_pdf(y - x),
            ModelFamily::BoundedNoise { obs_noise, .. } => obs_noise.log_pdf(y - x),
            ModelFamily::FunctionalAr(p) => p.obs_noise.log_pdf(y - p.b(x)),
            ModelFamily::Discrete(d) => {
                let i = match self.state_index(x) {
                    Some(i) => i,
                    None => return f64::NAN,
                };
                match &d.emission {
                    None => 0.0,
                    Some(e) => {
                        let r = y.round();
                        if (r - y).abs() > 1e-9 || r < 0.0 || r as usize >= d.symbols {
                            return f64::NEG_INFINITY;
                        }
                        e[i * d.symbols + r as usize].ln()
                    }
                }
            }
            ModelFamily::CounterexampleParity => match self.state_index(x) {
                Some(s) => {
                    let same = if (s >> 1) == (s & 1) { 1.0 } else { 0.0 };
                    if (y - same).abs() < 1e-9 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                }
                None => f64::NAN,
            },
            ModelFamily::CounterexampleCircle { half_width, shift } => {
                let v = NoiseDensity {
                    kind: NoiseKind::Uniform,
                    scale: *half_width,
                };
                let a = v.log_pdf(crate::grid::wrap_centered(y - x, 2.0 * PI));
                let b = v.log_pdf(crate::grid::wrap_centered(y - x - shift, 2.0 * PI));
                crate::grid::log_sum_exp(&[a, b]) + 0.5f64.ln()
            }
        }
    }

    pub fn eval_transition(&self, x: f64, x_next: f64) -> Result<f64> {
        let v = self.log_transition(x, x_next).exp();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { x, y: x_next })
        }
    }

    pub fn eval_observation(&self, x: f64, y: f64) -> Result<f64> {
        let v = self.log_observation(x, y).exp();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { x, y })
        }
    }

    /// Recommended grid: ±8 stationary sd for AR families, the integer
    /// states for finite families, 256 wrapped points on the circle.
    pub fn default_grid(&self) -> Result<Grid> {
        match &self.family {
            ModelFamily::GaussianAr(p) => {
                let s = 8.0 * p.stationary_sd();
                build_grid(-s, s, 2001, false)
            }
            ModelFamily::BoundedNoise { alpha, sigma, .. } => {
                let s = 8.0 * sigma / (1.0 - alpha * alpha).sqrt();
                build_grid(-s, s, 401, false)
            }
            ModelFamily::FunctionalAr(p) => {
                let a = p.drift.linear.abs().min(0.95);
                let spread = 12.0 * p.state_noise.scale / (1.0 - a * a).sqrt() + p.drift.sine.abs();
                build_grid(-spread, spread, 801, false)
            }
            ModelFamily::Discrete(d) => build_grid(0.0, (d.states - 1) as f64, d.states, false),
            ModelFamily::CounterexampleParity => build_grid(0.0, 3.0, 4, false),
            ModelFamily::CounterexampleCircle { .. } => build_grid(0.0, 2.0 * PI, 256, true),
        }
    }

    /// Matrix form of the transition on `grid`: finite families reproduce the
    /// table exactly; continuous ones use rectangle-rule weights and row
    /// renormalization.
    pub fn discretize_kernel(&self, grid: &Grid) -> Result<KernelMatrix> {
        if self.is_finite_state() {
            let n = grid.len();
            let mut rows = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let l = self.log_transition(grid.point(i), grid.point(j));
                    if l.is_nan() {
                        return Err(Error::param("grid", "finite-state model needs the integer state grid"));
                    }
                    rows[i * n + j] = l.exp();
                }
            }
            let logs = rows.iter().map(|p| p.ln()).collect();
            let k = KernelMatrix::from_log_rows(n, logs, vec![1.0; n], true)?;
            return Ok(k);
        }
        if self.is_circle() != grid.is_wraparound() {
            return Err(Error::param("grid", "circle models need a wraparound grid and vice versa"));
        }
        discretize_log_density(grid, |x, y| self.log_transition(x, y), true)
    }

    /// `log g(x_i, y)` for every grid point.
    pub fn observation_log_weights(&self, grid: &Grid, y: f64) -> Vec<f64> {
        grid.points().iter().map(|&x| self.log_observation(x, y)).collect()
    }

    fn sample_observation(&self, x: f64, rng: &mut ChaCha8Rng) -> f64 {
        match &self.family {
            ModelFamily::GaussianAr(p) => x + p.tau * Normal::new(0.0, 1.0).expect("unit").sample(rng),
            ModelFamily::BoundedNoise { obs_noise, .. } => x + obs_noise.sample(rng),
            ModelFamily::FunctionalAr(p) => p.b(x) + p.obs_noise.sample(rng),
            ModelFamily::Discrete(d) => {
                let i = self.state_index(x).expect("state on the integer grid");
                match &d.emission {
                    None => rng.random_range(0..d.symbols) as f64,
                    Some(e) => {
                        let row = &e[i * d.symbols..(i + 1) * d.symbols];
                        sample_index(row, row.iter().sum(), rng.random()) as f64
                    }
                }
            }
            ModelFamily::CounterexampleParity => {
                let s = self.state_index(x).expect("pair state");
                if (s >> 1) == (s & 1) {
                    1.0
                } else {
                    0.0
                }
            }
            ModelFamily::CounterexampleCircle { half_width, shift } => {
                let w = if rng.random::<bool>() { *shift } else { 0.0 };
                let v = NoiseDensity {
                    kind: NoiseKind::Uniform,
                    scale: *half_width,
                };
                wrap_angle(x + w + v.sample(rng))
            }
        }
    }

    fn sample_transition(&self, x: f64, rng: &mut ChaCha8Rng) -> f64 {
        match &self.family {
            ModelFamily::GaussianAr(p) => p.alpha * x + p.sigma * Normal::new(0.0, 1.0).expect("unit").sample(rng),
            ModelFamily::BoundedNoise { alpha, sigma, .. } => {
                alpha * x + sigma * Normal::new(0.0, 1.0).expect("unit").sample(rng)
            }
            ModelFamily::FunctionalAr(p) => p.drift.eval(x) + p.state_noise.sample(rng),
            _ => unreachable!("grid-native families are sampled on their grid"),
        }
    }
}

/// Samples `(x_{0:n}, y_{0:n})`. Continuous families draw in continuous state
/// space from a parametric prior; finite-state and circle families are
/// sampled as the grid chain on their default grid.
pub fn sample_path(model: &ModelSpec, prior: &PriorSpec, n: usize, seed: u64) -> Result<Path> {
    if model.is_finite_state() || model.is_circle() {
        let grid = std::sync::Arc::new(model.default_grid()?);
        let kernel = model.discretize_kernel(&grid)?;
        let xi = prior.to_prob_vector(grid.clone())?;
        return sample_path_on_grid(model, &grid, &kernel, &xi, n, seed);
    }
    let mut rng = path_rng(seed);
    let mut x = match prior {
        PriorSpec::Gaussian { mean, sd } => mean + sd * Normal::new(0.0, 1.0).expect("unit").sample(&mut rng),
        PriorSpec::Point { x } => *x,
        _ => {
            let grid = std::sync::Arc::new(model.default_grid()?);
            let xi = prior.to_prob_vector(grid.clone())?;
            grid.point(sample_index(&xi.probs(), 1.0, rng.random()))
        }
    };
    let mut states = Vec::with_capacity(n + 1);
    let mut observations = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i > 0 {
            x = model.sample_transition(x, &mut rng);
        }
        states.push(x);
        observations.push(model.sample_observation(x, &mut rng));
    }
    Ok(Path { states, observations })
}

/// Samples the grid chain driven by `kernel`, observations from the model.
pub fn sample_path_on_grid(
    model: &ModelSpec,
    grid: &Grid,
    kernel: &KernelMatrix,
    xi: &ProbVector,
    n: usize,
    seed: u64,
) -> Result<Path> {
    let mut rng = path_rng(seed);
    let mut i = sample_index(&xi.probs(), 1.0, rng.random());
    let mut states = Vec::with_capacity(n + 1);
    let mut observations = Vec::with_capacity(n + 1);
    for step in 0..=n {
        if step > 0 {
            if !kernel.is_valid(i) {
                return Err(Error::ZeroMass { index: step });
            }
            i = sample_index(kernel.row(i), 1.0, rng.random());
        }
        let x = grid.point(i);
        states.push(x);
        observations.push(model.sample_observation(x, &mut rng));
    }
    Ok(Path { states, observations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn normal_pdf(u: f64, s: f64) -> f64 {
        (-(u * u) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt())
    }

    #[test]
    fn gaussian_densities() {
        let m = make_preset("gaussian-ar", &PresetParams::new().with("alpha", 0.5)).unwrap();
        assert_abs_diff_eq!(m.eval_transition(0.0, 0.0).unwrap(), 0.398_942_280_4, epsilon = 1e-9);
        assert_abs_diff_eq!(m.eval_transition(2.0, 0.3).unwrap(), normal_pdf(0.3 - 1.0, 1.0), epsilon = 1e-14);
        assert_abs_diff_eq!(m.eval_observation(0.0, 0.0).unwrap(), 0.398_942_280_4, epsilon = 1e-9);
    }

    #[test]
    fn discrete_table_lookup() {
        let m = make_preset("discrete", &PresetParams::new()).unwrap();
        assert_abs_diff_eq!(m.eval_transition(0.0, 1.0).unwrap(), 0.4, epsilon = 1e-15);
        let grid = m.default_grid().unwrap();
        let k = m.discretize_kernel(&grid).unwrap();
        assert_eq!(k.row(0), &[0.6, 0.4]);
        assert_eq!(k.row(1), &[0.4, 0.6]);
    }

    #[test]
    fn bounded_noise_support() {
        let m = make_preset("bounded-noise", &PresetParams::new()).unwrap();
        assert_eq!(m.eval_observation(0.3, 0.3 + 1.0).unwrap(), 0.0);
        assert!(m.eval_observation(0.3, 0.5).unwrap() > 0.0);
        let grid = m.default_grid().unwrap();
        let k = m.discretize_kernel(&grid).unwrap();
        for i in [0, grid.len() / 2, grid.len() - 1] {
            assert_abs_diff_eq!(k.row(i).iter().sum::<f64>(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn parity_indicator() {
        let m = make_preset("counterexample-parity", &PresetParams::new()).unwrap();
        // state 3 = (1,1): equal bits, Y = 1.
        assert_eq!(m.eval_observation(3.0, 1.0).unwrap(), 1.0);
        assert_eq!(m.eval_observation(3.0, 0.0).unwrap(), 0.0);
        assert_eq!(m.eval_observation(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(m.eval_transition(1.0, 2.0).unwrap(), 0.5);
        assert_eq!(m.eval_transition(1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn circle_observation_bimodal() {
        let m = make_preset("counterexample-circle", &PresetParams::new()).unwrap();
        assert!(m.eval_observation(1.0, 1.0).unwrap() > 0.0);
        assert!(m.eval_observation(1.0 + PI, 1.0).unwrap() > 0.0);
        assert_eq!(m.eval_observation(1.0 + PI / 2.0, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(m.eval_observation(1.0, 1.0).unwrap(), 0.5 / 0.2, epsilon = 1e-12);
    }

    #[test]
    fn preset_errors() {
        assert!(make_preset("gaussian-ar", &PresetParams::new().with("alpha", 1.1)).is_err());
        assert!(matches!(make_preset("nope", &PresetParams::new()), Err(Error::UnknownPreset(_))));
        assert!(make_preset("gaussian-ar", &PresetParams::new().with("beta", 1)).is_err());
        assert!(make_preset("gaussian-ar", &PresetParams::new().with("alpha", 0.9)).is_ok());
    }

    #[test]
    fn preset_rows_integrate_to_one() {
        for name in PRESET_NAMES {
            let m = make_preset(name, &PresetParams::new()).unwrap();
            let grid = m.default_grid().unwrap();
            let k = m.discretize_kernel(&grid).unwrap();
            let mid = grid.len() / 2;
            assert_abs_diff_eq!(k.row(mid).iter().sum::<f64>(), 1.0, epsilon = 1e-6);
            assert!(k.coverage()[mid] > 0.999, "{name}");
        }
    }

    #[test]
    fn discretized_gaussian_row_moments() {
        let m = make_preset("gaussian-ar", &PresetParams::new().with("alpha", 0.5)).unwrap();
        let grid = build_grid(-10.0, 10.0, 2001, false).unwrap();
        let k = m.discretize_kernel(&grid).unwrap();
        let row = k.row(1000);
        let mean: f64 = row.iter().zip(grid.points()).map(|(p, x)| p * x).sum();
        let var: f64 = row.iter().zip(grid.points()).map(|(p, x)| p * (x - mean).powi(2)).sum();
        assert!(mean.abs() < 1e-3);
        assert!((var - 1.0).abs() < 1e-2);
    }

    #[test]
    fn sample_path_shapes_and_determinism() {
        let m = make_preset("gaussian-ar", &PresetParams::new()).unwrap();
        let prior = PriorSpec::Gaussian { mean: 0.0, sd: 1.0 };
        let p0 = sample_path(&m, &prior, 0, 3).unwrap();
        assert_eq!(p0.states.len(), 1);
        assert_eq!(p0.observations.len(), 1);
        let a = sample_path(&m, &prior, 50, 11).unwrap();
        let b = sample_path(&m, &prior, 50, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_path(&m, &prior, 50, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn iid_states_are_uncorrelated() {
        let m = make_preset("gaussian-ar", &PresetParams::new().with("alpha", 0.0)).unwrap();
        let n = 10_000;
        let p = sample_path(&m, &PriorSpec::Gaussian { mean: 0.0, sd: 1.0 }, n, 5).unwrap();
        let x = &p.states;
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let cov = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>();
        assert!((cov / var).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn grid_sampled_paths_are_consistent() {
        let m = make_preset("counterexample-parity", &PresetParams::new()).unwrap();
        let prior = PriorSpec::Weights {
            weights: vec![0.25; 4],
        };
        let p = sample_path(&m, &prior, 30, 1).unwrap();
        for w in p.states.windows(2) {
            assert_eq!((w[0] as usize) & 1, (w[1] as usize) >> 1);
        }
        for (x, y) in p.states.iter().zip(&p.observations) {
            assert_eq!(m.eval_observation(*x, *y).unwrap(), 1.0);
        }
    }

    #[test]
    fn prior_parsing() {
        assert_eq!(
            PriorSpec::parse("normal:-3:1").unwrap(),
            PriorSpec::Gaussian { mean: -3.0, sd: 1.0 }
        );
        assert_eq!(PriorSpec::parse("point:2").unwrap(), PriorSpec::Point { x: 2.0 });
        assert!(PriorSpec::parse("normal:0:0").is_err());
        let grid = Arc::new(build_grid(0.0, 3.0, 4, false).unwrap());
        let v = PriorSpec::parse("weights:0.5,0,0.5,0").unwrap().to_prob_vector(grid).unwrap();
        assert_abs_diff_eq!(v.probs()[2], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn noise_densities_integrate_to_one() {
        for kind in [
            NoiseKind::Gaussian,
            NoiseKind::Laplace,
            NoiseKind::Logistic,
            NoiseKind::Uniform,
            NoiseKind::Triangular,
        ] {
            let d = NoiseDensity::new(kind, 0.7).unwrap();
            let h = 1e-3;
            let s: f64 = (-40_000..=40_000).map(|i| d.pdf(i as f64 * h) * h).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 2e-3);
        }
    }

    #[test]
    fn noise_sample_moments() {
        let mut rng = crate::rng::stream_rng(1, 0);
        for (kind, var) in [
            (NoiseKind::Laplace, 2.0),
            (NoiseKind::Logistic, PI * PI / 3.0),
            (NoiseKind::Uniform, 1.0 / 3.0),
            (NoiseKind::Triangular, 1.0 / 6.0),
        ] {
            let d = NoiseDensity::new(kind, 1.0).unwrap();
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            assert!(m.abs() < 0.02, "{kind}: mean {m}");
            assert!((v / var - 1.0).abs() < 0.03, "{kind}: var {v}");
        }
    }

    #[test]
    fn curvature_matches_finite_differences() {
        for kind in [NoiseKind::Gaussian, NoiseKind::Logistic, NoiseKind::Cauchy] {
            let d = NoiseDensity::new(kind, 1.3).unwrap();
            for u in [-2.0, -0.4, 0.3, 1.7] {
                let h = 1e-4;
                let fd = (d.log_pdf(u + h) - 2.0 * d.log_pdf(u) + d.log_pdf(u - h)) / (h * h);
                assert_abs_diff_eq!(fd, d.log_curvature(u), epsilon = 1e-5);
            }
        }
    }

    proptest! {
        #[test]
        fn superadditivity_gamma(a in 0.0f64..30.0, b in 0.0f64..30.0, scale in 0.2f64..3.0) {
            for kind in [NoiseKind::Laplace, NoiseKind::Logistic, NoiseKind::Cauchy] {
                let d = NoiseDensity::new(kind, scale).unwrap();
                let g = d.gamma().unwrap();
                let lhs = d.log_pdf(a + b);
                let rhs = g.ln() + d.log_pdf(a) + d.log_pdf(b);
                prop_assert!(lhs >= rhs - 1e-9, "{} a={} b={}", kind, a, b);
            }
        }

        #[test]
        fn observation_density_nonnegative(x in -20.0f64..20.0, y in -20.0f64..20.0) {
            for name in ["gaussian-ar", "bounded-noise", "functional-ar", "counterexample-circle"] {
                let m = make_preset(name, &PresetParams::new()).unwrap();
                prop_assert!(m.eval_observation(x, y).unwrap() >= 0.0);
            }
        }
    }
}
