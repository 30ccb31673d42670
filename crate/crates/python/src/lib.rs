//! Python bindings: codes, protocol synthesis, checking and simulation.

use ::detprep::protocol::{assemble, DetFtProtocol, Encoder, SynthOptions};
use ::detprep::sim::{estimate_ler, exhaustive_single_fault_check, fit_scaling, NoiseModel, SimOptions, SimResult};
use ::detprep::{catalog, CssCode, Error, ReductionMode};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::UnknownCode(_) => PyKeyError::new_err(e.to_string()),
        Error::Parse(_) | Error::Json(_) | Error::InvalidCode(_) | Error::InvalidCircuit(_) | Error::LengthMismatch(..) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(m: &::detprep::BitMatrix) -> Vec<String> {
    m.rows().iter().map(|r| r.to_string()).collect()
}

#[pyclass(name = "Code", frozen, from_py_object)]
#[derive(Clone)]
struct PyCode(CssCode);

#[pymethods]
impl PyCode {
    /// Built-in code by name.
    #[staticmethod]
    fn get(name: &str) -> PyResult<Self> {
        catalog::get(name).map(PyCode).map_err(err)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        CssCode::from_json_str(s).map(PyCode).map_err(err)
    }

    /// Code from dotted row strings; logicals are derived.
    #[staticmethod]
    fn from_checks(name: &str, hx: Vec<String>, hz: Vec<String>) -> PyResult<Self> {
        let n = hx.first().or(hz.first()).map_or(0, |r| r.len());
        let parse = |v: &[String]| {
            let r: Vec<&str> = v.iter().map(String::as_str).collect();
            ::detprep::BitMatrix::parse(n, &r)
        };
        let code = CssCode::new(name, parse(&hx).map_err(err)?, parse(&hz).map_err(err)?, None).map_err(err)?;
        Ok(PyCode(code))
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }
    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }
    #[getter]
    fn k(&self) -> usize {
        self.0.k
    }
    #[getter]
    fn d(&self) -> usize {
        self.0.d
    }
    #[getter]
    fn hx(&self) -> Vec<String> {
        rows(&self.0.hx)
    }
    #[getter]
    fn hz(&self) -> Vec<String> {
        rows(&self.0.hz)
    }
    #[getter]
    fn lx(&self) -> Vec<String> {
        rows(&self.0.lx)
    }
    #[getter]
    fn lz(&self) -> Vec<String> {
        rows(&self.0.lz)
    }

    fn to_json(&self) -> String {
        self.0.to_json_string()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

#[pyclass(name = "SimResult", frozen, get_all)]
struct PySimResult {
    p: f64,
    shots: u64,
    errors: u64,
    ler: f64,
    ci: f64,
}

impl From<SimResult> for PySimResult {
    fn from(r: SimResult) -> Self {
        PySimResult { p: r.p, shots: r.shots, errors: r.errors, ler: r.ler, ci: r.ci }
    }
}

#[pymethods]
impl PySimResult {
    fn __repr__(&self) -> String {
        format!("SimResult(p={}, shots={}, errors={}, ler={:.3e})", self.p, self.shots, self.errors, self.ler)
    }
}

#[pyclass(name = "Protocol")]
struct PyProtocol(DetFtProtocol);

#[pymethods]
impl PyProtocol {
    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        DetFtProtocol::from_json_str(s).map(PyProtocol).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json_string().map_err(err)
    }

    fn circuit_text(&self) -> PyResult<String> {
        self.0.circuit_text().map_err(err)
    }

    #[getter]
    fn code(&self) -> PyCode {
        PyCode(self.0.code.clone())
    }
    #[getter]
    fn num_layers(&self) -> usize {
        self.0.layers.len()
    }
    #[getter]
    fn truncated(&self) -> bool {
        self.0.truncated
    }

    /// (total ancillas, total CNOTs, mean correction ancillas, mean correction CNOTs).
    fn totals(&self) -> PyResult<(usize, usize, f64, f64)> {
        let m = self.0.metrics().map_err(err)?;
        Ok((m.sum_anc, m.sum_cnot, m.mean_anc, m.mean_cnot))
    }

    /// Per-layer columns of the metrics row.
    fn layer_fields(&self) -> PyResult<Vec<String>> {
        Ok(self.0.metrics().map_err(err)?.layer_fields())
    }

    fn csv_row(&self) -> PyResult<String> {
        Ok(self.0.metrics().map_err(err)?.csv_row(&self.0.code))
    }

    /// Violations of the single-fault check, one string each.
    fn check(&self, py: Python<'_>) -> PyResult<Vec<String>> {
        let v = py.detach(|| exhaustive_single_fault_check(&self.0)).map_err(err)?;
        Ok(v.iter().map(|x| x.to_string()).collect())
    }

    #[pyo3(signature = (p, shots=100_000, seed=0, target_errors=None))]
    fn simulate(&self, py: Python<'_>, p: f64, shots: u64, seed: u64, target_errors: Option<u64>) -> PyResult<PySimResult> {
        let noise = NoiseModel::uniform(p).map_err(err)?;
        let opts = SimOptions { max_shots: shots, target_errors, seed, ..SimOptions::default() };
        py.detach(|| estimate_ler(&self.0, noise, opts)).map(PySimResult::from).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Protocol({:?}, layers={})", self.0.code, self.0.layers.len())
    }
}

/// Synthesizes a protocol for `code` (a name or a `Code`).
#[pyfunction]
#[pyo3(signature = (code, global_search=false, budget=None, reduction="state", encoder="best"))]
fn synthesize(
    py: Python<'_>,
    code: &Bound<'_, PyAny>,
    global_search: bool,
    budget: Option<f64>,
    reduction: &str,
    encoder: &str,
) -> PyResult<PyProtocol> {
    let code = match code.extract::<String>() {
        Ok(name) => catalog::get(&name).map_err(err)?,
        Err(_) => code.extract::<PyCode>()?.0,
    };
    let encoder = match encoder {
        "rref" => Encoder::Rref,
        "tuned" => Encoder::Tuned,
        "greedy" => Encoder::Greedy,
        "best" => Encoder::Best,
        other => return Err(PyValueError::new_err(format!("unknown encoder {other:?}"))),
    };
    let opts = SynthOptions {
        global: global_search,
        budget_ms: budget.map(|s| (s.max(0.0) * 1000.0) as u64),
        reduction: reduction.parse::<ReductionMode>().map_err(err)?,
        encoder,
        ..SynthOptions::default()
    };
    py.detach(|| assemble(&code, opts)).map(PyProtocol).map_err(err)
}

/// Names of the built-in codes.
#[pyfunction]
fn codes() -> Vec<&'static str> {
    catalog::NAMES.to_vec()
}

/// Least-squares slope of log(ler) against log(p).
#[pyfunction]
fn scaling_slope(results: Vec<PyRef<'_, PySimResult>>) -> PyResult<f64> {
    let rs: Vec<SimResult> = results
        .iter()
        .map(|r| SimResult {
            p: r.p,
            shots: r.shots,
            errors: r.errors,
            ler: r.ler,
            ci: r.ci,
            ci_low: 0.0,
            ci_high: 0.0,
            interval: String::new(),
        })
        .collect();
    fit_scaling(&rs).map_err(err)
}

#[pymodule(name = "detprep")]
fn detprep_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCode>()?;
    m.add_class::<PyProtocol>()?;
    m.add_class::<PySimResult>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(codes, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_slope, m)?)?;
    Ok(())
}
