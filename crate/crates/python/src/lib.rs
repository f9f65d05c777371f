//! Python bindings: presets, grids, the smoothing pipeline, coupling and the
//! scenario runner.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict};

use forgetting::bounds::{auto_coupling_width, default_beta_tilde, drift_verify, gaussian_constants, pair_drift_mean};
use forgetting::coupling::{coupling_constant, lindvall_check, CouplingSetSpec};
use forgetting::experiment::{self, ExperimentConfig};
use forgetting::model::{sample_path, GaussianARParams};
use forgetting::{build_grid, tv_distance, Error, PresetParams, PriorSpec};

fn to_py(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn value_string(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if v.is_instance_of::<PyBool>() {
        return Ok(if v.extract::<bool>()? { "true" } else { "false" }.to_string());
    }
    Ok(v.str()?.to_string())
}

fn coupling_set(set: &Bound<'_, PyAny>) -> PyResult<CouplingSetSpec> {
    if let Ok(c) = set.extract::<f64>() {
        return Ok(CouplingSetSpec::Tube { c });
    }
    match set.extract::<String>()?.as_str() {
        "full" => Ok(CouplingSetSpec::FullSpace),
        "empty" => Ok(CouplingSetSpec::Empty),
        other => Err(PyValueError::new_err(format!("unknown coupling set {other:?}"))),
    }
}

/// Uniform grid; `wraparound` makes it a circle of period `hi - lo`.
#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: Arc<forgetting::Grid>,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (lo, hi, size, wraparound = false))]
    fn new(lo: f64, hi: f64, size: usize, wraparound: bool) -> PyResult<Self> {
        Ok(PyGrid {
            inner: Arc::new(build_grid(lo, hi, size, wraparound).map_err(to_py)?),
        })
    }

    #[getter]
    fn points(&self) -> Vec<f64> {
        self.inner.points().to_vec()
    }

    #[getter]
    fn step(&self) -> f64 {
        self.inner.step()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Grid(lo={}, hi={}, size={})", self.inner.lo(), self.inner.hi(), self.inner.len())
    }
}

/// A named preset with optional parameter overrides.
#[pyclass(name = "Model", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: forgetting::ModelSpec,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (name, params = None))]
    fn new(name: &str, params: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut p = PresetParams::new();
        if let Some(d) = params {
            for (k, v) in d.iter() {
                p.insert(&k.extract::<String>()?, &value_string(&v)?);
            }
        }
        Ok(PyModel {
            inner: forgetting::make_preset(name, &p).map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    fn default_grid(&self) -> PyResult<PyGrid> {
        Ok(PyGrid {
            inner: Arc::new(self.inner.default_grid().map_err(to_py)?),
        })
    }

    /// Simulates `(states, observations)` of length `n + 1`.
    #[pyo3(signature = (n, prior = "normal:0:1", seed = 1))]
    fn sample_path(&self, n: usize, prior: &str, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let prior = PriorSpec::parse(prior).map_err(to_py)?;
        let path = sample_path(&self.inner, &prior, n, seed).map_err(to_py)?;
        Ok((path.states, path.observations))
    }

    fn __repr__(&self) -> String {
        format!("Model({:?})", self.inner.name())
    }
}

/// Backward functions and forward kernels for one observation record.
#[pyclass(name = "Pipeline", frozen)]
struct PyPipeline {
    inner: forgetting::SmoothingPipeline,
}

impl PyPipeline {
    fn prior(&self, spec: &str) -> PyResult<forgetting::ProbVector> {
        PriorSpec::parse(spec)
            .and_then(|p| p.to_prob_vector(self.inner.grid().clone()))
            .map_err(to_py)
    }
}

#[pymethods]
impl PyPipeline {
    #[new]
    #[pyo3(signature = (model, observations, grid = None))]
    fn new(model: &PyModel, observations: Vec<f64>, grid: Option<&PyGrid>) -> PyResult<Self> {
        let grid = match grid {
            Some(g) => g.inner.clone(),
            None => Arc::new(model.inner.default_grid().map_err(to_py)?),
        };
        Ok(PyPipeline {
            inner: forgetting::SmoothingPipeline::new(&model.inner, grid, observations).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid {
            inner: self.inner.grid().clone(),
        }
    }

    /// Log backward function at index `k`, normalized to maximum 0.
    fn log_backward(&self, k: usize) -> PyResult<Vec<f64>> {
        if k > self.inner.n() {
            return Err(PyValueError::new_err("k exceeds n"));
        }
        Ok(self.inner.log_backward(k))
    }

    /// Row `i` of the forward smoothing kernel at index `k`.
    fn forward_row(&self, k: usize, i: usize) -> PyResult<Vec<f64>> {
        let kern = self.inner.forward_kernel(k).map_err(to_py)?;
        if i >= kern.size() {
            return Err(PyValueError::new_err("row index out of range"));
        }
        Ok(kern.row(i).to_vec())
    }

    /// Filter probabilities at index `k` for a prior spec such as `normal:0:1`.
    fn filter(&self, prior: &str, k: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.filter_distribution(&self.prior(prior)?, k).map_err(to_py)?.probs())
    }

    /// Total variation between the filters at index `k` from two priors.
    fn tv(&self, prior: &str, prior2: &str, k: usize) -> PyResult<f64> {
        let a = self.inner.filter_distribution(&self.prior(prior)?, k).map_err(to_py)?;
        let b = self.inner.filter_distribution(&self.prior(prior2)?, k).map_err(to_py)?;
        tv_distance(&a, &b).map_err(to_py)
    }

    /// `epsilon` of the `m`-step kernel from index `k` on a set given as
    /// `"full"`, `"empty"` or a tube half-width.
    #[pyo3(signature = (k, m = 1, set = None))]
    fn coupling_constant(&self, k: usize, m: usize, set: Option<&Bound<'_, PyAny>>) -> PyResult<f64> {
        let set = set.map(coupling_set).transpose()?.unwrap_or(CouplingSetSpec::FullSpace);
        coupling_constant(&self.inner, k, m, &set).map_err(to_py)
    }

    /// Per-index drift constants and the minimized `A_{m,n}` bound.
    fn drift(&self, py: Python<'_>, prior: &str, prior2: &str, set: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let spec = drift_verify(&self.inner, &coupling_set(set)?).map_err(to_py)?;
        let p0 = self.inner.smoothing_marginal(&self.prior(prior)?, 0).map_err(to_py)?;
        let q0 = self.inner.smoothing_marginal(&self.prior(prior2)?, 0).map_err(to_py)?;
        let scan = forgetting::bounds::amn_scan(&spec, pair_drift_mean(&p0, &q0));
        let out = PyDict::new(py);
        out.set_item("lambda", spec.lambda.clone())?;
        out.set_item("rho", spec.rho.clone())?;
        out.set_item("epsilon", spec.epsilon.clone())?;
        out.set_item("B", spec.b.clone())?;
        out.set_item("amn", scan.values.clone())?;
        out.set_item("bound", scan.min)?;
        out.set_item("argmin_m", scan.argmin)?;
        Ok(out.into_any().unbind())
    }

    /// Coupled-chain tail estimate against the measured TV at index `n`.
    #[pyo3(signature = (prior, prior2, set, replicates = 1000, seed = 1, m = 1))]
    fn lindvall(
        &self,
        py: Python<'_>,
        prior: &str,
        prior2: &str,
        set: &Bound<'_, PyAny>,
        replicates: usize,
        seed: u64,
        m: usize,
    ) -> PyResult<Py<PyAny>> {
        let r = lindvall_check(&self.inner, &self.prior(prior)?, &self.prior(prior2)?, m, &coupling_set(set)?, replicates, seed)
            .map_err(to_py)?;
        Ok(json_to_py(py, &r)?.unbind())
    }
}

/// Closed-form Gaussian AR constants; `c` and `beta_tilde` default to the
/// automatic choices.
#[pyfunction]
#[pyo3(signature = (alpha, sigma, tau, c = None, beta_tilde = None))]
fn gaussian_ar_constants(
    py: Python<'_>,
    alpha: f64,
    sigma: f64,
    tau: f64,
    c: Option<f64>,
    beta_tilde: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let p = GaussianARParams::new(alpha, sigma, tau).map_err(to_py)?;
    let bt = beta_tilde.unwrap_or_else(|| default_beta_tilde(&p));
    let c = match c {
        Some(c) => c,
        None => auto_coupling_width(&p, bt).map_err(to_py)?,
    };
    Ok(json_to_py(py, &gaussian_constants(&p, c, bt).map_err(to_py)?)?.unbind())
}

/// Runs a scenario from `key -> value` settings and returns the report;
/// nothing is written unless `write` is true.
#[pyfunction]
#[pyo3(signature = (settings, write = false))]
fn run_experiment(py: Python<'_>, settings: &Bound<'_, PyDict>, write: bool) -> PyResult<Py<PyAny>> {
    let mut pairs = Vec::new();
    for (k, v) in settings.iter() {
        pairs.push((k.extract::<String>()?, value_string(&v)?));
    }
    let cfg = ExperimentConfig::from_pairs(&pairs).map_err(to_py)?;
    let report = py.detach(|| experiment::run(&cfg)).map_err(to_py)?;
    if write {
        experiment::write_outputs(&report).map_err(to_py)?;
    }
    Ok(json_to_py(py, &report)?.unbind())
}

#[pyfunction]
fn list_scenarios() -> String {
    experiment::list_scenarios()
}

#[pymodule]
fn forgetting_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(gaussian_ar_constants, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    Ok(())
}
