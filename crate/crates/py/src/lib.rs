//! Python bindings: corpus handling, model fits, effect sizes, and
//! threshold derivation, mirroring the CLI pipeline.
//!
//! Structured results cross the boundary as plain dicts/lists so the Python
//! side needs no wrapper types beyond `Corpus` and `Fit`.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList};

use poolfit::inference;
use poolfit::models::ModelKind;
use poolfit::sampler::SamplerConfig;
use poolfit::synth::{self, GenSpec};
use poolfit::thresholds::{self, ThresholdOptions, DEFAULT_TAUS};

fn py_err(err: poolfit::Error) -> PyErr {
    match err {
        poolfit::Error::Io { .. } => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        Value::String(s) => s.as_str().into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let converted: PyResult<Vec<_>> = items.iter().map(|v| json_to_py(py, v)).collect();
            PyList::new(py, converted?)?.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &json)
}

fn parse_model(name: &str) -> PyResult<ModelKind> {
    match name {
        "full" | "full_pool" => Ok(ModelKind::FullPool),
        "unpooled" => Ok(ModelKind::Unpooled),
        "partial" | "partial_pool" => Ok(ModelKind::PartialPool),
        other => Err(PyValueError::new_err(format!(
            "unknown model `{other}`; expected full, unpooled, or partial"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    chains: usize,
    iterations: usize,
    warmup: usize,
    leapfrog_steps: usize,
    target_accept: f64,
    seed: u64,
) -> SamplerConfig {
    SamplerConfig { chains, iterations, warmup, leapfrog_steps, target_accept, seed }
}

/// A validated per-file metric corpus.
#[pyclass(frozen, name = "Corpus")]
struct PyCorpus {
    inner: poolfit::Corpus,
}

#[pymethods]
impl PyCorpus {
    /// Reads a `project,file,role,cbo` CSV.
    #[staticmethod]
    fn load_csv(path: &str) -> PyResult<Self> {
        Ok(Self { inner: poolfit::Corpus::load_csv(path).map_err(py_err)? })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.save_csv(path).map_err(py_err)
    }

    /// Keeps only projects that contain at least one target-role file.
    fn filter_projects_with_role(&self) -> PyResult<Self> {
        Ok(Self { inner: self.inner.filter_projects_with_role().map_err(py_err)? })
    }

    fn projects(&self) -> Vec<String> {
        self.inner.projects().to_vec()
    }

    #[getter]
    fn n_projects(&self) -> usize {
        self.inner.n_projects()
    }

    fn project_stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.project_stats())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Corpus({} files, {} projects)", self.inner.len(), self.inner.n_projects())
    }
}

/// A fitted model with samples, estimates, and diagnostics.
#[pyclass(frozen, name = "Fit")]
struct PyFit {
    inner: inference::FitResult,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn model(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged()
    }

    #[getter]
    fn max_split_rhat(&self) -> f64 {
        self.inner.convergence.max_split_rhat
    }

    #[getter]
    fn divergences(&self) -> usize {
        self.inner.convergence.divergence_count
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    fn projects(&self) -> Vec<String> {
        self.inner.projects.clone()
    }

    /// Predicted mean log response for `project` at role indicator `x`.
    fn predict(&self, project: &str, x: f64) -> PyResult<f64> {
        inference::predict(&self.inner, project, x).map_err(py_err)
    }

    fn point_estimates<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.point_estimates)
    }

    fn convergence<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.convergence)
    }

    /// Pooled mean/sd/quantiles per parameter.
    fn param_summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.samples.summary())
    }

    /// Per-project metric thresholds (partial-pooling fits only).
    #[pyo3(signature = (taus=None, x=1.0, predictive=false))]
    fn thresholds<'py>(
        &self,
        py: Python<'py>,
        taus: Option<Vec<f64>>,
        x: f64,
        predictive: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let taus = taus.unwrap_or_else(|| DEFAULT_TAUS.to_vec());
        let report = thresholds::threshold_report(&self.inner, &taus, ThresholdOptions { x, predictive })
            .map_err(py_err)?;
        to_py(py, &report)
    }

    /// (mean RMSE, per-project RMSE dict) of this fit over a corpus.
    #[pyo3(signature = (corpus, weighted=false, raw_space=false))]
    fn rmse<'py>(
        &self,
        py: Python<'py>,
        corpus: &PyCorpus,
        weighted: bool,
        raw_space: bool,
    ) -> PyResult<(f64, Bound<'py, PyAny>)> {
        let opts = inference::RmseOptions { weighted, raw_space };
        let (mean, per_project) = inference::rmse_for_fit(&self.inner, &corpus.inner, opts).map_err(py_err)?;
        Ok((mean, to_py(py, &per_project)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "Fit(model={}, converged={}, max_split_rhat={:.3})",
            self.inner.kind,
            self.inner.converged(),
            self.inner.convergence.max_split_rhat
        )
    }
}

/// Fits one of the three models to a corpus.
#[pyfunction]
#[pyo3(signature = (corpus, model="partial", chains=2, iterations=1000, warmup=500, leapfrog_steps=20, target_accept=0.8, seed=0))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    corpus: &PyCorpus,
    model: &str,
    chains: usize,
    iterations: usize,
    warmup: usize,
    leapfrog_steps: usize,
    target_accept: f64,
    seed: u64,
) -> PyResult<PyFit> {
    let kind = parse_model(model)?;
    let config = build_config(chains, iterations, warmup, leapfrog_steps, target_accept, seed);
    let inner = py
        .detach(|| inference::fit(kind, &corpus.inner, &config))
        .map_err(py_err)?;
    Ok(PyFit { inner })
}

/// Fits all three models and returns the RMSE comparison as a dict.
#[pyfunction]
#[pyo3(signature = (corpus, chains=2, iterations=1000, warmup=500, leapfrog_steps=20, target_accept=0.8, seed=0, weighted=false, raw_space=false))]
#[allow(clippy::too_many_arguments)]
fn rmse_compare<'py>(
    py: Python<'py>,
    corpus: &PyCorpus,
    chains: usize,
    iterations: usize,
    warmup: usize,
    leapfrog_steps: usize,
    target_accept: f64,
    seed: u64,
    weighted: bool,
    raw_space: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let config = build_config(chains, iterations, warmup, leapfrog_steps, target_accept, seed);
    let opts = inference::RmseOptions { weighted, raw_space };
    let table = py
        .detach(|| inference::rmse_compare_with(&corpus.inner, &config, opts))
        .map_err(py_err)?;
    to_py(py, &table)
}

/// Draws a synthetic corpus; returns (corpus, truth dict).
#[pyfunction]
#[pyo3(signature = (projects=30, files_min=28, files_max=2000, controller_fraction=0.2, mu_a=2.5, sigma_a=0.6, mu_b=0.8, sigma_b=0.3, sigma=0.7, seed=0))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    projects: usize,
    files_min: usize,
    files_max: usize,
    controller_fraction: f64,
    mu_a: f64,
    sigma_a: f64,
    mu_b: f64,
    sigma_b: f64,
    sigma: f64,
    seed: u64,
) -> PyResult<(PyCorpus, Bound<'py, PyAny>)> {
    let spec = GenSpec {
        n_projects: projects,
        files_min,
        files_max,
        controller_fraction,
        mu_a,
        sigma_a,
        mu_b,
        sigma_b,
        sigma,
    };
    let (corpus, truth) = synth::generate(&spec, seed).map_err(py_err)?;
    Ok((PyCorpus { inner: corpus }, to_py(py, &truth)?))
}

/// Mann-Whitney U for sample `a` against `b`, ties averaged.
#[pyfunction]
fn mann_whitney_u(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    poolfit::effects::mann_whitney_u(&a, &b).map_err(py_err)
}

/// Cliff's delta between samples `a` and `b`.
#[pyfunction]
fn cliffs_delta(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    poolfit::effects::cliffs_delta(&a, &b).map_err(py_err)
}

/// Pooled effect report for the role split of a corpus.
#[pyfunction]
fn effect_sizes<'py>(py: Python<'py>, corpus: &PyCorpus) -> PyResult<Bound<'py, PyAny>> {
    let report = poolfit::effects::effect_report(&corpus.inner).map_err(py_err)?;
    to_py(py, &report)
}

/// Inverse standard normal CDF.
#[pyfunction]
fn normal_quantile(p: f64) -> PyResult<f64> {
    thresholds::normal_quantile(p).map_err(py_err)
}

/// Closed-form pooled least squares (alpha, beta, rmse).
#[pyfunction]
fn ols_crosscheck(corpus: &PyCorpus) -> PyResult<(f64, f64, f64)> {
    let fit = inference::ols_crosscheck(&corpus.inner).map_err(py_err)?;
    Ok((fit.alpha, fit.beta, fit.rmse))
}

#[pymodule]
fn poolfit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(rmse_compare, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney_u, m)?)?;
    m.add_function(wrap_pyfunction!(cliffs_delta, m)?)?;
    m.add_function(wrap_pyfunction!(effect_sizes, m)?)?;
    m.add_function(wrap_pyfunction!(normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(ols_crosscheck, m)?)?;
    Ok(())
}
