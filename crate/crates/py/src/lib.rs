//! Python bindings. Matrices cross the boundary as lists of rows; records
//! come back as plain dicts.

use deqnc_core::deq::{fixed_point_closed_form, fixed_point_iterate, DeqWeights, OnFailure, SolverPolicy};
use deqnc_core::etf;
use deqnc_core::harness::{self, Overrides};
use deqnc_core::lpm;
use deqnc_core::metrics;
use deqnc_core::numerics::{Matrix, Rng};
use deqnc_core::theory;
use deqnc_core::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Shape { .. } | Error::EmptyClass(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py)
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Simplex ETF `S` (d×k) with column norm `alpha`.
#[pyfunction]
#[pyo3(signature = (k, d, alpha=1.0, seed=0))]
fn make_etf(k: usize, d: usize, alpha: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let frame = etf::make_etf(k, d, alpha, &mut Rng::new(seed)).map_err(to_py)?;
    Ok(frame.s.to_rows())
}

#[pyfunction]
fn etf_gram(k: usize, alpha: f64) -> Vec<Vec<f64>> {
    etf::etf_gram(k, alpha).to_rows()
}

/// Logits are K×N, one column per sample.
#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    lpm::cross_entropy(&matrix(logits)?, &labels).map_err(to_py)
}

#[pyfunction]
fn accuracy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    lpm::accuracy(&matrix(logits)?, &labels).map_err(to_py)
}

/// `(nc1, nc2, nc3)` for D×N features and a K×D classifier.
#[pyfunction]
#[pyo3(signature = (features, labels, k, w, cutoff=1e-10))]
fn nc_metrics(features: Vec<Vec<f64>>, labels: Vec<usize>, k: usize, w: Vec<Vec<f64>>, cutoff: f64) -> PyResult<(f64, f64, f64)> {
    let stats = metrics::class_statistics(&matrix(features)?, &labels, k).map_err(to_py)?;
    let nc1 = metrics::nc1(&stats, cutoff).map_err(to_py)?;
    let nc2 = metrics::nc2(&stats.class_means).map_err(to_py)?;
    let nc3 = metrics::nc3(&matrix(w)?, &stats.class_means).map_err(to_py)?;
    Ok((nc1, nc2, nc3))
}

/// `(I − W)⁻¹·H⁰`.
#[pyfunction]
#[pyo3(signature = (w_deq, h0, e_h=None))]
fn fixed_point(w_deq: Vec<Vec<f64>>, h0: Vec<Vec<f64>>, e_h: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let w = matrix(w_deq)?;
    let budget = e_h.unwrap_or_else(|| w.frobenius_norm().max(f64::MIN_POSITIVE));
    let weights = DeqWeights::new(w, budget).map_err(to_py)?;
    Ok(fixed_point_closed_form(&weights, &matrix(h0)?).map_err(to_py)?.to_rows())
}

/// Picard iteration; returns `(z_star, iterations, converged)`.
#[pyfunction(name = "fixed_point_iterate")]
#[pyo3(signature = (w_deq, h0, epsilon=1e-3, t_max=20))]
fn fixed_point_iterate_py(w_deq: Vec<Vec<f64>>, h0: Vec<Vec<f64>>, epsilon: f64, t_max: usize) -> PyResult<(Vec<Vec<f64>>, usize, bool)> {
    let w = matrix(w_deq)?;
    let budget = w.frobenius_norm().max(f64::MIN_POSITIVE);
    let weights = DeqWeights::new(w, budget).map_err(to_py)?;
    let policy = SolverPolicy {
        epsilon,
        t_max,
        on_failure: OnFailure::AcceptLast,
    };
    let r = fixed_point_iterate(&weights, &matrix(h0)?, &policy).map_err(to_py)?;
    Ok((r.z_star.to_rows(), r.iterations, r.converged))
}

/// `(lhs, rhs)` of the log bound for class `k` with constants `c1`, `c2`.
#[pyfunction]
fn lemma1_bound(deltas: Vec<f64>, k: usize, c1: f64, c2: f64) -> PyResult<(f64, f64)> {
    let consts = theory::BoundConstants::new(c1, c2, deltas.len()).map_err(to_py)?;
    theory::lemma1_bound(&deltas, k, &consts).map_err(to_py)
}

#[pyfunction]
fn remark1_optimal_ratio(deltas: Vec<f64>, k: usize) -> PyResult<f64> {
    theory::remark1_optimal_ratio(&deltas, k).map_err(to_py)
}

/// `(deq_bound, explicit_bound)` with constants at ratio `c1/c2`.
#[pyfunction]
fn balanced_lower_bounds(e_w: f64, e_h: f64, k: usize, ratio: f64) -> PyResult<(f64, f64)> {
    let consts = theory::constants_from_ratio(ratio, k).map_err(to_py)?;
    let b = theory::balanced_lower_bounds(e_w, e_h, k, &consts).map_err(to_py)?;
    Ok((b.deq_bound, b.explicit_bound))
}

#[pyfunction]
fn theorem2_conditions<'py>(py: Python<'py>, e_w: f64, e_h: f64, gram_h0: Vec<Vec<f64>>, etf_gram: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    let r = theory::theorem2_conditions(e_w, e_h, &matrix(gram_h0)?, &matrix(etf_gram)?).map_err(to_py)?;
    json_to_py(py, &r)
}

/// A resolved experiment config.
#[pyclass(name = "ExperimentConfig", module = "deqnc", skip_from_py_object)]
#[derive(Clone)]
struct PyExperimentConfig {
    inner: harness::ExperimentConfig,
}

#[pymethods]
impl PyExperimentConfig {
    #[staticmethod]
    #[pyo3(signature = (text, seed=None, output_dir=None, preset=None))]
    fn from_toml(text: &str, seed: Option<u64>, output_dir: Option<String>, preset: Option<&str>) -> PyResult<Self> {
        let overrides = Overrides {
            preset: preset.map(str::parse).transpose().map_err(to_py)?,
            seed,
            output_dir: output_dir.map(Into::into),
        };
        let inner = harness::ExperimentConfig::from_toml(text, &overrides).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.train.seed
    }

    #[getter]
    fn output_dir(&self) -> String {
        self.inner.output_dir.display().to_string()
    }

    fn __repr__(&self) -> String {
        format!("ExperimentConfig(name={:?}, hash={})", self.inner.name, &self.inner.hash()[..12])
    }
}

/// Trains the configured heads and returns the run record as a dict.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &PyExperimentConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let record = py.detach(move || harness::run_experiment(&cfg)).map_err(to_py)?;
    json_to_py(py, &record)
}

#[pymodule]
fn deqnc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(make_etf, m)?)?;
    m.add_function(wrap_pyfunction!(etf_gram, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(nc_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_point_iterate_py, m)?)?;
    m.add_function(wrap_pyfunction!(lemma1_bound, m)?)?;
    m.add_function(wrap_pyfunction!(remark1_optimal_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_lower_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(theorem2_conditions, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyExperimentConfig>()?;
    Ok(())
}
