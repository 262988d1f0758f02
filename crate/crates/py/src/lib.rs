//! Python bindings. Matrices cross the boundary as lists of rows; result
//! structs come back as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use hca_core::completion::{self, MaskedMatrix, NnrConfig};
use hca_core::data::{self, DomainCollection};
use hca_core::hca::{self as hca_mod, HcaConfig};
use hca_core::ica::{self as ica_mod, IcaConfig};
use hca_core::ingest::{self, LeaderboardRow, RuleSet};
use hca_core::matrix_json;
use hca_core::pipeline::{self, PipelineConfig};
use hca_core::scaling::{self, SigmoidFitConfig};
use hca_core::simulate::{self as sim, SimulationConfig};
use hca_core::subspace::{self, Scaling};
use hca_core::{Error, ErrorClass};
use nalgebra::DMatrix;

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Input => PyValueError::new_err(msg),
        ErrorClass::Numerical => PyArithmeticError::new_err(msg),
        ErrorClass::NoSolution => PyRuntimeError::new_err(msg),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    matrix_json::from_rows(&rows).map_err(PyValueError::new_err)
}

fn is_matrix(o: &serde_json::Map<String, Value>) -> bool {
    o.len() == 3 && o.contains_key("rows") && o.contains_key("cols") && o.get("data").is_some_and(Value::is_array)
}

// `{rows, cols, data}` objects become lists of rows
fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) if is_matrix(o) => {
            let cols = o["cols"].as_u64().unwrap_or(0) as usize;
            let data: Vec<f64> = o["data"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect();
            let rows: Vec<Vec<f64>> = if cols == 0 {
                Vec::new()
            } else {
                data.chunks(cols).map(<[f64]>::to_vec).collect()
            };
            rows.into_pyobject(py)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn dict<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Grouped benchmark data: one observation matrix per domain.
#[pyclass(name = "DomainCollection", module = "pyhca", skip_from_py_object)]
struct PyCollection {
    inner: DomainCollection,
}

#[pymethods]
impl PyCollection {
    #[new]
    fn new(benchmarks: Vec<String>, domains: Vec<(String, Vec<Vec<f64>>)>) -> PyResult<Self> {
        let ds = domains
            .into_iter()
            .map(|(id, x)| data::DomainDataset::new(id, matrix(x)?).map_err(err))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyCollection {
            inner: DomainCollection::new(benchmarks, ds).map_err(err)?,
        })
    }

    #[staticmethod]
    fn read_bundle(path: PathBuf) -> PyResult<Self> {
        Ok(PyCollection {
            inner: data::read_bundle(&path).map_err(err)?,
        })
    }

    fn write_bundle(&self, path: PathBuf) -> PyResult<()> {
        data::write_bundle(&path, &self.inner).map(|_| ()).map_err(err)
    }

    #[getter]
    fn benchmarks(&self) -> Vec<String> {
        self.inner.benchmarks().to_vec()
    }

    #[getter]
    fn domain_ids(&self) -> Vec<String> {
        self.inner.domains().iter().map(|d| d.domain_id.clone()).collect()
    }

    fn observations(&self, domain: &str) -> PyResult<Vec<Vec<f64>>> {
        let d = self
            .inner
            .get(domain)
            .ok_or_else(|| PyValueError::new_err(format!("unknown domain {domain}")))?;
        Ok(matrix_json::to_rows(&d.observations))
    }

    fn latents(&self, domain: &str) -> PyResult<Option<Vec<Vec<f64>>>> {
        let d = self
            .inner
            .get(domain)
            .ok_or_else(|| PyValueError::new_err(format!("unknown domain {domain}")))?;
        Ok(d.latents.as_ref().map(matrix_json::to_rows))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "DomainCollection({} domains, {} benchmarks)",
            self.inner.len(),
            self.inner.benchmarks().len()
        )
    }
}

/// Synthetic data; returns `(collection, ground_truth)`.
#[pyfunction]
#[pyo3(signature = (d0=3, n=6, domains=4, samples=2000, seed=0, alpha=None, per_domain_mixing=false, noise_std=0.0))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    d0: usize,
    n: usize,
    domains: usize,
    samples: usize,
    seed: u64,
    alpha: Option<f64>,
    per_domain_mixing: bool,
    noise_std: f64,
) -> PyResult<(PyCollection, Bound<'py, PyAny>)> {
    let cfg = SimulationConfig {
        d0,
        n,
        domains,
        samples,
        seed,
        alpha,
        per_domain_mixing,
        noise_std,
        ..SimulationConfig::default()
    };
    let (c, truth) = sim::simulate(&cfg).map_err(err)?;
    Ok((PyCollection { inner: c }, dict(py, &truth)?))
}

#[pyfunction]
#[pyo3(signature = (x, d0, seed=0, restarts=None))]
fn fast_ica<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    d0: usize,
    seed: u64,
    restarts: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = IcaConfig {
        seed,
        ..IcaConfig::default()
    };
    if let Some(r) = restarts {
        cfg.restarts = r;
    }
    let r = ica_mod::fast_ica(&matrix(x)?, d0, &cfg).map_err(err)?;
    dict(py, &r)
}

/// Search over per-domain unmixing matrices (each `d0 × n`).
#[pyfunction]
#[pyo3(signature = (unmixing, seed=0, budget=None, gram_schmidt=false))]
fn hca_search<'py>(
    py: Python<'py>,
    unmixing: Vec<Vec<Vec<f64>>>,
    seed: u64,
    budget: Option<u64>,
    gram_schmidt: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mats = pipeline::matrices_from_rows(&unmixing).map_err(err)?;
    let mut cfg = HcaConfig {
        seed,
        orthonormalize_h: gram_schmidt,
        ..HcaConfig::default()
    };
    if let Some(b) = budget {
        cfg.budget = b;
    }
    let sol = hca_mod::hca_search(&mats, &cfg).map_err(err)?;
    let rec = hca_mod::recover_graph_weights(&sol.b_hats).map_err(err)?;
    let out = dict(py, &sol)?;
    out.set_item("recovered", dict(py, &rec)?)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (collection, d0=3, seed=0, domains=None, strict=false))]
fn run_pipeline<'py>(
    py: Python<'py>,
    collection: &PyCollection,
    d0: usize,
    seed: u64,
    domains: Option<Vec<String>>,
    strict: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = PipelineConfig {
        d0,
        seed,
        strict,
        ..PipelineConfig::default()
    };
    cfg.domains.ids = domains;
    let r = py
        .detach(|| pipeline::run_pipeline(&collection.inner, &cfg))
        .map_err(err)?;
    dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (x, r, zscore=false))]
fn pca<'py>(py: Python<'py>, x: Vec<Vec<f64>>, r: usize, zscore: bool) -> PyResult<Bound<'py, PyAny>> {
    let s = if zscore { Scaling::Zscore } else { Scaling::Raw };
    dict(py, &subspace::pca(&matrix(x)?, r, s).map_err(err)?)
}

/// `1 - mean cos θ` between the column spans of two bases.
#[pyfunction]
fn subspace_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    subspace::basis_distance(&matrix(a)?, &matrix(b)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (collection, r=3, zscore=false))]
fn distance_matrix<'py>(
    py: Python<'py>,
    collection: &PyCollection,
    r: usize,
    zscore: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let s = if zscore { Scaling::Zscore } else { Scaling::Raw };
    dict(py, &subspace::pairwise_distance_matrix(&collection.inner, r, s).map_err(err)?)
}

/// Soft-impute. `observed` marks known entries; hidden values are ignored.
#[pyfunction]
#[pyo3(signature = (values, observed, lam))]
fn nnr_complete<'py>(
    py: Python<'py>,
    values: Vec<Vec<f64>>,
    observed: Vec<Vec<bool>>,
    lam: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let v = matrix(values)?;
    let (r, c) = v.shape();
    if observed.len() != r || observed.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("mask shape differs from values"));
    }
    let mask = DMatrix::from_fn(r, c, |i, j| observed[i][j]);
    let m = MaskedMatrix::new(v, mask).map_err(err)?;
    dict(py, &completion::nnr_complete(&m, lam, &NnrConfig::default()).map_err(err)?)
}

#[pyfunction]
fn sigmoid_fit<'py>(py: Python<'py>, c: Vec<f64>, t: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    dict(py, &scaling::sigmoid_fit(&c, &t, &y, &SigmoidFitConfig::default()).map_err(err)?)
}

/// Sigmoid fit plus backdoor-adjusted effect of `t`, controlling for ln C.
#[pyfunction]
#[pyo3(signature = (c, t, y, bins=5))]
fn treatment_effect<'py>(py: Python<'py>, c: Vec<f64>, t: Vec<f64>, y: Vec<f64>, bins: usize) -> PyResult<Bound<'py, PyAny>> {
    let fit = scaling::sigmoid_fit(&c, &t, &y, &SigmoidFitConfig::default()).map_err(err)?;
    let x: Vec<f64> = c.iter().map(|v| v.ln()).collect();
    dict(py, &scaling::ate_backdoor(&y, &t, &x, &fit, bins).map_err(err)?)
}

/// `(base_model_id, tier)` under the bundled rules, or `None`.
#[pyfunction]
#[pyo3(signature = (model_name, parameter_count=None, declared_base=None, architecture=None))]
fn attribute(
    model_name: String,
    parameter_count: Option<f64>,
    declared_base: Option<String>,
    architecture: Option<String>,
) -> Option<(String, String)> {
    let row = LeaderboardRow {
        model_name,
        declared_base,
        architecture,
        parameter_count,
        upload_date: None,
        is_moe: None,
        fine_tuned: None,
        scores: Vec::new(),
    };
    ingest::attribute_base_model(&row, &RuleSet::default_rules()).map(|a| (a.base_model_id, a.tier.as_str().to_string()))
}

#[pyfunction]
fn compute_flops(params_billions: f64, tokens_trillions: f64) -> f64 {
    ingest::compute_flops(params_billions, tokens_trillions)
}

#[pymodule]
fn pyhca(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCollection>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fast_ica, m)?)?;
    m.add_function(wrap_pyfunction!(hca_search, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    m.add_function(wrap_pyfunction!(subspace_distance, m)?)?;
    m.add_function(wrap_pyfunction!(distance_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(nnr_complete, m)?)?;
    m.add_function(wrap_pyfunction!(sigmoid_fit, m)?)?;
    m.add_function(wrap_pyfunction!(treatment_effect, m)?)?;
    m.add_function(wrap_pyfunction!(attribute, m)?)?;
    m.add_function(wrap_pyfunction!(compute_flops, m)?)?;
    Ok(())
}
