//! Scenario runner behind the CLI: configuration, one pass over the horizons,
//! and the CSV / JSON / SVG writers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::bounds::{
    amn_scan, auto_coupling_width, bounded_noise_bound, default_beta_tilde, far_constants, gaussian_constants,
    index_drift, pair_drift_mean, strong_small_constants, uniform_product_bound, DriftSpec, FarConstants,
    GaussianConstants, IndexDrift, SmallSetConstants,
};
use crate::coupling::{estimate_tail, set_coupling_constant, simulate_coupled, CouplingSetSpec, DEFAULT_PAIR_BUDGET};
use crate::error::{Error, Result};
use crate::grid::{build_grid, tv_distance, Grid};
use crate::model::{make_preset, preset_parameters, sample_path, ModelFamily, ModelSpec, PresetParams, PriorSpec, PRESET_NAMES};
use crate::smoothing::SmoothingPipeline;

/// Measured TV may exceed a finite bound by this much before it counts as a
/// violation.
pub const VIOLATION_SLACK: f64 = 1e-9;

pub const CSV_COLUMNS: [&str; 13] = [
    "scenario",
    "seed",
    "n",
    "m",
    "tv_measured",
    "bound_uniform",
    "bound_drift_min",
    "argmin_m",
    "coupling_tail",
    "coupling_tail_se",
    "epsilon_min",
    "lambda_max",
    "B_max",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

/// How the coupling set is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CouplingChoice {
    /// Tube width from the Gaussian constants (Gaussian AR only).
    Auto,
    Tube { c: f64 },
    Full,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub params: PresetParams,
    pub prior: PriorSpec,
    pub prior2: PriorSpec,
    /// Prior of the simulated hidden path.
    pub true_prior: PriorSpec,
    pub horizons: Vec<usize>,
    pub grid_size: Option<usize>,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    pub m: usize,
    pub coupling: CouplingChoice,
    pub replicates: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub formats: Vec<OutputFormat>,
    pub obs_file: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| config_err(format!("bad value {v:?} for `{key}`")))
}

/// Parses `N`, `A,B,C` or `START:END:STEP`.
pub fn parse_horizons(v: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = v.split(':').collect();
    let out: Vec<usize> = match parts.as_slice() {
        [a, b, s] => {
            let (a, b, s): (usize, usize, usize) = (parse_num("n", a)?, parse_num("n", b)?, parse_num("n", s)?);
            if s == 0 {
                return Err(config_err("horizon step must be positive"));
            }
            (a..=b).step_by(s).collect()
        }
        [list] => list.split(',').map(|t| parse_num("n", t)).collect::<Result<_>>()?,
        _ => return Err(config_err(format!("cannot parse horizons {v:?}"))),
    };
    if out.is_empty() || out.contains(&0) {
        return Err(config_err("horizons must be positive"));
    }
    if out.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_err("horizons must be strictly ascending"));
    }
    Ok(out)
}

fn parse_formats(v: &str) -> Result<Vec<OutputFormat>> {
    v.split(',')
        .map(|f| match f.trim() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "svg" => Ok(OutputFormat::Svg),
            other => Err(config_err(format!("unknown output format {other:?}"))),
        })
        .collect()
}

fn parse_coupling(v: &str) -> Result<CouplingChoice> {
    match v.trim() {
        "auto" => Ok(CouplingChoice::Auto),
        "full" => Ok(CouplingChoice::Full),
        "empty" => Ok(CouplingChoice::Empty),
        c => {
            let c: f64 = parse_num("coupling-width", c)?;
            if !(c >= 0.0 && c.is_finite()) {
                return Err(config_err("coupling width must be finite and non-negative"));
            }
            Ok(CouplingChoice::Tube { c })
        }
    }
}

impl ExperimentConfig {
    /// Defaults for a preset: priors, horizons and coupling set.
    pub fn for_scenario(scenario: &str) -> Result<Self> {
        if preset_parameters(scenario).is_none() {
            return Err(Error::UnknownPreset(scenario.to_string()));
        }
        let normal = |m: f64| PriorSpec::Gaussian { mean: m, sd: 1.0 };
        let (prior, prior2, true_prior, horizons, coupling) = match scenario {
            "gaussian-ar" => (normal(-3.0), normal(3.0), normal(0.0), (10..=100).step_by(10).collect(), CouplingChoice::Auto),
            "bounded-noise" => (normal(-3.0), normal(3.0), normal(0.0), (5..=40).step_by(5).collect(), CouplingChoice::Full),
            "functional-ar" => (normal(-3.0), normal(3.0), normal(0.0), (5..=40).step_by(5).collect(), CouplingChoice::Tube { c: 4.0 }),
            "discrete" => (
                PriorSpec::Point { x: 0.0 },
                PriorSpec::Point { x: 1.0 },
                PriorSpec::Uniform,
                (5..=50).step_by(5).collect(),
                CouplingChoice::Full,
            ),
            "counterexample-parity" => (
                PriorSpec::Weights { weights: vec![1.0, 0.0, 1.0, 0.0] },
                PriorSpec::Weights { weights: vec![0.0, 1.0, 0.0, 1.0] },
                PriorSpec::Uniform,
                (5..=50).step_by(5).collect(),
                CouplingChoice::Full,
            ),
            "counterexample-circle" => (
                PriorSpec::Point { x: 0.0 },
                PriorSpec::Point { x: std::f64::consts::PI },
                PriorSpec::Uniform,
                (5..=50).step_by(5).collect(),
                CouplingChoice::Full,
            ),
            _ => unreachable!(),
        };
        Ok(ExperimentConfig {
            scenario: scenario.to_string(),
            params: PresetParams::new(),
            prior,
            prior2,
            true_prior,
            horizons,
            grid_size: None,
            grid_lo: None,
            grid_hi: None,
            m: 1,
            coupling,
            replicates: 0,
            seed: 1,
            out: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
            obs_file: None,
        })
    }

    /// Builds a config from `key = value` pairs applied in order. The
    /// scenario is resolved first; `param.NAME` keys set model parameters.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let scenario = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "scenario")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| config_err("missing `scenario`"))?;
        let mut cfg = Self::for_scenario(&scenario)?;
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        make_preset(&cfg.scenario, &cfg.params)?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "scenario" => {}
            "n" => self.horizons = parse_horizons(v)?,
            "m" => {
                self.m = parse_num(key, v)?;
                if self.m == 0 {
                    return Err(config_err("m must be >= 1"));
                }
            }
            "grid-size" => self.grid_size = Some(parse_num(key, v)?),
            "grid-lo" => self.grid_lo = Some(parse_num(key, v)?),
            "grid-hi" => self.grid_hi = Some(parse_num(key, v)?),
            "seed" => self.seed = parse_num(key, v)?,
            "replicates" => self.replicates = parse_num(key, v)?,
            "coupling-width" => self.coupling = parse_coupling(v)?,
            "out" => self.out = PathBuf::from(v),
            "format" => self.formats = parse_formats(v)?,
            "obs-file" => self.obs_file = Some(PathBuf::from(v)),
            "prior" => self.prior = PriorSpec::parse(v)?,
            "prior2" => self.prior2 = PriorSpec::parse(v)?,
            "true-prior" => self.true_prior = PriorSpec::parse(v)?,
            "param" => {
                let (name, val) = v
                    .split_once('=')
                    .ok_or_else(|| config_err(format!("expected NAME=VALUE for param, got {v:?}")))?;
                self.params.insert(name.trim(), val.trim());
            }
            _ => match key.strip_prefix("param.") {
                Some(name) => self.params.insert(name, v),
                None => return Err(config_err(format!("unknown configuration key `{key}`"))),
            },
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec> {
        make_preset(&self.scenario, &self.params)
    }

    /// The preset's default grid with any configured overrides applied.
    pub fn grid(&self, model: &ModelSpec) -> Result<Grid> {
        let d = model.default_grid()?;
        if self.grid_size.is_none() && self.grid_lo.is_none() && self.grid_hi.is_none() {
            return Ok(d);
        }
        if model.is_finite_state() {
            return Err(config_err("finite-state scenarios use their fixed state grid"));
        }
        let hi = match (self.grid_hi, d.is_wraparound()) {
            (Some(h), _) => h,
            (None, true) => d.lo() + d.period(),
            (None, false) => d.hi(),
        };
        build_grid(self.grid_lo.unwrap_or(d.lo()), hi, self.grid_size.unwrap_or(d.len()), d.is_wraparound())
    }
}

/// Parses a flat `key = value` file; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected key = value", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        // `param.alpha = 0.5` and `param = alpha=0.5` are both accepted.
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Reads a whitespace-separated observation record.
pub fn read_observations(path: &FsPath) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    text.split_whitespace()
        .map(|t| t.parse().map_err(|_| config_err(format!("bad observation {t:?} in {}", path.display()))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonRow {
    pub scenario: String,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub tv_measured: f64,
    pub bound_uniform: Option<f64>,
    pub bound_drift_min: Option<f64>,
    pub argmin_m: Option<usize>,
    pub coupling_tail: Option<f64>,
    pub coupling_tail_se: Option<f64>,
    pub epsilon_min: Option<f64>,
    pub lambda_max: Option<f64>,
    #[serde(rename = "B_max")]
    pub b_max: Option<f64>,
    /// Further bounds checked against `tv_measured`, by name.
    pub other_bounds: BTreeMap<String, f64>,
    /// Reported only; not checked.
    pub reported: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReportConstants {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<GaussianConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub small_set: Option<SmallSetSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub functional_ar: Option<FarConstants>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallSetSummary {
    pub sigma_minus: f64,
    pub sigma_plus: f64,
}

impl From<&SmallSetConstants> for SmallSetSummary {
    fn from(s: &SmallSetConstants) -> Self {
        SmallSetSummary {
            sigma_minus: s.sigma_minus,
            sigma_plus: s.sigma_plus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub config: ExperimentConfig,
    pub model: ModelSpec,
    pub grid_points: usize,
    pub grid_range: (f64, f64),
    pub observations: Vec<f64>,
    pub rows: Vec<HorizonRow>,
    pub constants: ReportConstants,
    pub violations: Vec<String>,
}

fn coupling_set(cfg: &ExperimentConfig, model: &ModelSpec, constants: &mut ReportConstants) -> Result<CouplingSetSpec> {
    Ok(match cfg.coupling {
        CouplingChoice::Auto => {
            let p = model
                .gaussian_params()
                .ok_or_else(|| config_err("coupling-width = auto needs the gaussian-ar scenario"))?;
            let bt = default_beta_tilde(&p);
            let c = auto_coupling_width(&p, bt)?;
            constants.gaussian = Some(gaussian_constants(&p, c, bt)?);
            constants.coupling_width = Some(c);
            CouplingSetSpec::Tube { c }
        }
        CouplingChoice::Tube { c } => {
            constants.coupling_width = Some(c);
            if let Some(p) = model.gaussian_params() {
                match gaussian_constants(&p, c, default_beta_tilde(&p)) {
                    Ok(g) => constants.gaussian = Some(g),
                    Err(e) => constants.notes.push(format!("gaussian constants unavailable: {e}")),
                }
            }
            CouplingSetSpec::Tube { c }
        }
        CouplingChoice::Full => CouplingSetSpec::FullSpace,
        CouplingChoice::Empty => CouplingSetSpec::Empty,
    })
}

/// Closed-form Gaussian bound `min_m (1-eps)^m + B^m beta_tilde^{2n} V`.
fn gaussian_closed_bound(g: &GaussianConstants, n: usize, v: f64) -> f64 {
    (1..=n)
        .map(|m| (1.0 - g.epsilon).powi(m as i32) + g.b.powi(m as i32) * g.beta_tilde.powi(2 * n as i32) * v)
        .fold(f64::INFINITY, f64::min)
}

fn is_counterexample(model: &ModelSpec) -> bool {
    matches!(model.family, ModelFamily::CounterexampleParity | ModelFamily::CounterexampleCircle { .. })
}

/// Runs the configured scenario over every horizon.
pub fn run(cfg: &ExperimentConfig) -> Result<BoundReport> {
    let model = cfg.model()?;
    let grid = Arc::new(cfg.grid(&model)?);
    let q = Arc::new(model.discretize_kernel(&grid)?);
    let n_max = *cfg.horizons.last().ok_or_else(|| config_err("no horizons"))?;
    let observations = match &cfg.obs_file {
        Some(path) => {
            let ys = read_observations(path)?;
            if ys.len() <= n_max {
                return Err(config_err(format!(
                    "observation file has {} values, horizon {n_max} needs {}",
                    ys.len(),
                    n_max + 1
                )));
            }
            ys[..=n_max].to_vec()
        }
        None => sample_path(&model, &cfg.true_prior, n_max, cfg.seed)?.observations,
    };
    let xi = cfg.prior.to_prob_vector(grid.clone())?;
    let xi2 = cfg.prior2.to_prob_vector(grid.clone())?;

    let mut constants = ReportConstants::default();
    let counter = is_counterexample(&model);
    let set = coupling_set(cfg, &model, &mut constants)?;
    let small = if model.is_finite_state() && !counter {
        let mask = vec![true; grid.len()];
        let s = strong_small_constants(&q, &mask)?;
        constants.small_set = Some((&s).into());
        Some(s)
    } else {
        None
    };
    if let ModelFamily::FunctionalAr(p) = &model.family {
        match far_constants(p, 2.0) {
            Ok(c) => constants.functional_ar = Some(c),
            Err(e) => constants.notes.push(format!("functional-AR constants: {e}")),
        }
    }
    if counter {
        constants
            .notes
            .push("counterexample: no bound applies, bound columns are n/a".to_string());
    }

    let mut rows = Vec::with_capacity(cfg.horizons.len());
    let mut violations = Vec::new();
    for &n in &cfg.horizons {
        log::info!("{}: horizon {n}", cfg.scenario);
        let pipe = SmoothingPipeline::with_kernel(&model, grid.clone(), q.clone(), observations[..=n].to_vec())?;
        let tv = tv_distance(&pipe.filter_distribution(&xi, n)?, &pipe.filter_distribution(&xi2, n)?)?;
        let mut row = HorizonRow {
            scenario: cfg.scenario.clone(),
            seed: cfg.seed,
            n,
            m: cfg.m,
            tv_measured: tv,
            bound_uniform: None,
            bound_drift_min: None,
            argmin_m: None,
            coupling_tail: None,
            coupling_tail_se: None,
            epsilon_min: None,
            lambda_max: None,
            b_max: None,
            other_bounds: BTreeMap::new(),
            reported: BTreeMap::new(),
        };
        if !counter {
            horizon_bounds(cfg, &model, &grid, &pipe, &set, small.as_ref(), &observations, &mut row, &mut constants)?;
            if let Some(g) = &constants.gaussian {
                let v = 1.0 + 2.0 * cfg.prior.second_moment().unwrap_or(f64::NAN) + 2.0 * cfg.prior2.second_moment().unwrap_or(f64::NAN);
                if v.is_finite() {
                    row.reported.insert("gaussian_closed_form".into(), gaussian_closed_bound(g, n, v));
                }
            }
        }
        if cfg.replicates > 0 {
            if cfg.m > n {
                return Err(config_err(format!("m = {} exceeds horizon {n}", cfg.m)));
            }
            let run = simulate_coupled(&pipe, &xi, &xi2, cfg.m, &set, cfg.replicates, cfg.seed)?;
            let tail = estimate_tail(&run.traces, n, cfg.m)?;
            row.coupling_tail = Some(tail.p_hat);
            row.coupling_tail_se = Some(tail.se);
            if tv > tail.p_hat + 3.0 * tail.se {
                violations.push(format!("n={n}: tv {tv:e} exceeds coupling tail {:e} + 3 SE", tail.p_hat));
            }
        }
        for (name, b) in [("bound_uniform", row.bound_uniform), ("bound_drift_min", row.bound_drift_min)]
            .into_iter()
            .filter_map(|(k, b)| b.map(|b| (k.to_string(), b)))
            .chain(row.other_bounds.iter().map(|(k, v)| (k.clone(), *v)))
        {
            if b.is_finite() && tv > b + VIOLATION_SLACK {
                violations.push(format!("n={n}: tv {tv:e} exceeds {name} {b:e}"));
            }
        }
        rows.push(row);
    }
    Ok(BoundReport {
        config: cfg.clone(),
        model,
        grid_points: grid.len(),
        grid_range: (grid.lo(), grid.hi()),
        observations,
        rows,
        constants,
        violations,
    })
}

#[allow(clippy::too_many_arguments)]
fn horizon_bounds(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    grid: &Arc<Grid>,
    pipe: &SmoothingPipeline,
    set: &CouplingSetSpec,
    small: Option<&SmallSetConstants>,
    observations: &[f64],
    row: &mut HorizonRow,
    constants: &mut ReportConstants,
) -> Result<()> {
    let n = pipe.n();
    let mut block_eps = Vec::new();
    let mut drift: Option<Vec<IndexDrift>> = (!grid.is_wraparound()).then(Vec::new);
    for k in 0..n {
        let kern = pipe.forward_kernel(k)?;
        if cfg.m == 1 {
            block_eps.push(set_coupling_constant(&kern, grid, &CouplingSetSpec::FullSpace, DEFAULT_PAIR_BUDGET));
        }
        if let Some(items) = drift.as_mut() {
            let d = index_drift(&kern, grid, set.at(k))?;
            if d.lambda >= 1.0 {
                constants.notes.push(format!(
                    "n={n}: drift condition fails at index {k} (lambda = {:.4} at ({:.3}, {:.3}))",
                    d.lambda, d.lambda_pair.0, d.lambda_pair.1
                ));
                drift = None;
            } else {
                items.push(d);
            }
        }
    }
    if cfg.m > 1 {
        for b in 0..n / cfg.m {
            let kern = pipe.skeleton(b, cfg.m)?;
            block_eps.push(set_coupling_constant(&kern, grid, &CouplingSetSpec::FullSpace, DEFAULT_PAIR_BUDGET));
        }
    }
    row.bound_uniform = Some(uniform_product_bound(&block_eps));
    if let Some(items) = drift {
        let spec = DriftSpec::from_indices(&items);
        let v0 = pair_drift_mean(&pipe.smoothing_marginal(&xi_of(cfg, grid)?.0, 0)?, &pipe.smoothing_marginal(&xi_of(cfg, grid)?.1, 0)?);
        let scan = amn_scan(&spec, v0);
        row.bound_drift_min = Some(scan.min);
        row.argmin_m = Some(scan.argmin);
        row.epsilon_min = Some(spec.epsilon_min());
        row.lambda_max = Some(spec.lambda_max());
        row.b_max = Some(spec.b_max());
        row.reported.insert(
            "B_product_form_max".into(),
            spec.b_product_form.iter().copied().fold(1.0, f64::max),
        );
    }
    if let Some(s) = small {
        row.other_bounds.insert("uniform_remark".into(), (1.0 - s.ratio()).powi(n as i32));
    }
    if matches!(model.family, ModelFamily::BoundedNoise { .. }) {
        row.other_bounds
            .insert("bounded_noise_product".into(), bounded_noise_bound(model, grid, pipe.transition(), observations, n)?);
    }
    Ok(())
}

fn xi_of(cfg: &ExperimentConfig, grid: &Arc<Grid>) -> Result<(crate::grid::ProbVector, crate::grid::ProbVector)> {
    Ok((cfg.prior.to_prob_vector(grid.clone())?, cfg.prior2.to_prob_vector(grid.clone())?))
}

fn fmt_opt<T: ToString>(v: Option<T>, missing: &str) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| missing.to_string())
}

/// CSV with the fixed column set. Bounds that do not apply are `n/a`; tail
/// columns are empty when no replicates were run.
pub fn write_csv(report: &BoundReport, w: impl std::io::Write) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in &report.rows {
        out.write_record([
            r.scenario.clone(),
            r.seed.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.tv_measured.to_string(),
            fmt_opt(r.bound_uniform, "n/a"),
            fmt_opt(r.bound_drift_min, "n/a"),
            fmt_opt(r.argmin_m, "n/a"),
            fmt_opt(r.coupling_tail, ""),
            fmt_opt(r.coupling_tail_se, ""),
            fmt_opt(r.epsilon_min, "n/a"),
            fmt_opt(r.lambda_max, "n/a"),
            fmt_opt(r.b_max, "n/a"),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json(report: &BoundReport, w: impl std::io::Write) -> Result<()> {
    serde_json::to_writer_pretty(w, report)?;
    Ok(())
}

/// Line chart of `log10` of the measured TV and the finite bounds against `n`.
pub fn render_svg(report: &BoundReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    let floor = 1e-20f64;
    let mut series: Vec<(&str, &str, Vec<(f64, f64)>)> = vec![
        ("tv_measured", "#1f77b4", report.rows.iter().map(|r| (r.n as f64, r.tv_measured)).collect()),
        ("bound_uniform", "#ff7f0e", report.rows.iter().filter_map(|r| r.bound_uniform.map(|b| (r.n as f64, b))).collect()),
        ("bound_drift_min", "#2ca02c", report.rows.iter().filter_map(|r| r.bound_drift_min.map(|b| (r.n as f64, b))).collect()),
        ("coupling_tail", "#d62728", report.rows.iter().filter_map(|r| r.coupling_tail.map(|b| (r.n as f64, b))).collect()),
    ];
    series.retain(|s| !s.2.is_empty());
    let logs = |v: f64| v.max(floor).log10();
    let xs: Vec<f64> = report.rows.iter().map(|r| r.n as f64).collect();
    let (x0, x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let ys: Vec<f64> = series.iter().flat_map(|s| s.2.iter().map(|p| logs(p.1))).collect();
    let y0 = ys.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let y1 = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil().max(y0 + 1.0);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0).max(1.0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<polyline points="{PAD},{PAD} {PAD},{b} {r},{b}" fill="none" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">n</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">log10</text>"#, H / 2.0, H / 2.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0}</text>"#, PAD - 4.0, sy(y0));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1}</text>"#, PAD - 4.0, sy(y1) + 10.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x0}</text>"#, sx(x0), H - PAD + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x1}</text>"#, sx(x1), H - PAD + 16.0);
    for (i, (name, color, pts)) in series.iter().enumerate() {
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(logs(*y)))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        let ly = PAD + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#, W - PAD - 110.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the requested formats to `cfg.out` and returns the paths.
pub fn write_outputs(report: &BoundReport) -> Result<Vec<PathBuf>> {
    let dir = &report.config.out;
    std::fs::create_dir_all(dir)?;
    let stem = &report.config.scenario;
    let mut paths = Vec::new();
    for f in &report.config.formats {
        let path = match f {
            OutputFormat::Csv => {
                let p = dir.join(format!("{stem}.csv"));
                write_csv(report, std::fs::File::create(&p)?)?;
                p
            }
            OutputFormat::Json => {
                let p = dir.join(format!("{stem}.json"));
                write_json(report, std::io::BufWriter::new(std::fs::File::create(&p)?))?;
                p
            }
            OutputFormat::Svg => {
                let p = dir.join(format!("{stem}.svg"));
                std::fs::write(&p, render_svg(report))?;
                p
            }
        };
        paths.push(path);
    }
    Ok(paths)
}

/// Presets with their parameters and defaults.
pub fn list_scenarios() -> String {
    let mut s = String::new();
    for name in PRESET_NAMES {
        let params = preset_parameters(name).unwrap_or(&[]);
        let shown: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(s, "{name}");
        if shown.is_empty() {
            let _ = writeln!(s, "    (no parameters)");
        } else {
            let _ = writeln!(s, "    {}", shown.join(" "));
        }
    }
    s
}
