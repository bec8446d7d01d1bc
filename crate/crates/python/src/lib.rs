//! Python bindings. Structured results (reports, curves, census) are returned
//! as plain dicts and lists decoded from the library's JSON output.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fairaudit_core::report::{self, AuditInput, AuditReport, AuditSettings};
use fairaudit_core::synth::{self, GroupSpec, Profile};
use fairaudit_core::trainers::{self, Method, TrainConfig};
use fairaudit_core::{calibration, posthoc, ranking, Error, Format, PairedPredictions, PredictionRecord};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_loads<'py>(py: Python<'py>, s: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (s,))
}

/// Scored records for one method: `(id, p, y, identity, text)`.
#[pyclass(name = "PredictionSet", module = "fairaudit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPredictionSet {
    inner: fairaudit_core::PredictionSet,
}

#[pymethods]
impl PyPredictionSet {
    #[new]
    #[pyo3(signature = (name, ids, p, y, identities=None, texts=None))]
    fn new(
        name: String,
        ids: Vec<String>,
        p: Vec<f64>,
        y: Vec<u8>,
        identities: Option<Vec<String>>,
        texts: Option<Vec<Option<String>>>,
    ) -> PyResult<Self> {
        let n = ids.len();
        if p.len() != n || y.len() != n {
            return Err(PyValueError::new_err("ids, p and y must have equal length"));
        }
        let identities = identities.unwrap_or_else(|| vec![fairaudit_core::BACKGROUND.to_string(); n]);
        let texts = texts.unwrap_or_else(|| vec![None; n]);
        if identities.len() != n || texts.len() != n {
            return Err(PyValueError::new_err("identities and texts must match ids in length"));
        }
        let records = ids
            .into_iter()
            .zip(p)
            .zip(y)
            .zip(identities)
            .zip(texts)
            .map(|((((id, p), y), g), t)| {
                let r = PredictionRecord::new(id, p, y, g)?;
                Ok(match t {
                    Some(t) => r.with_text(t),
                    None => r,
                })
            })
            .collect::<Result<Vec<_>, Error>>()
            .map_err(to_py)?;
        let inner = fairaudit_core::PredictionSet::new(name, records).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads a CSV or JSONL file; the format follows the extension unless given.
    #[staticmethod]
    #[pyo3(signature = (path, format=None, name=None))]
    fn load(path: PathBuf, format: Option<&str>, name: Option<String>) -> PyResult<Self> {
        let format = match format {
            Some(f) => f.parse::<Format>().map_err(to_py)?,
            None => Format::from_path(&path)
                .ok_or_else(|| PyValueError::new_err("cannot infer format from extension; pass format="))?,
        };
        let set = fairaudit_core::load_predictions(&path, format).map_err(to_py)?;
        Ok(Self {
            inner: match name {
                Some(n) => set.renamed(n),
                None => set,
            },
        })
    }

    /// One of the built-in synthetic profiles: `"erm"`, `"reweighted"` or `"dro"`.
    #[staticmethod]
    #[pyo3(signature = (profile, seed=42))]
    fn from_profile(profile: &str, seed: u64) -> PyResult<Self> {
        let profile: Profile = profile.parse().map_err(to_py)?;
        Ok(Self { inner: synth::profile_set(profile, seed) })
    }

    #[pyo3(signature = (path, format=None))]
    fn save(&self, path: PathBuf, format: Option<&str>) -> PyResult<()> {
        let format = match format {
            Some(f) => f.parse::<Format>().map_err(to_py)?,
            None => Format::from_path(&path).unwrap_or(Format::Jsonl),
        };
        let file = std::fs::File::create(&path)?;
        fairaudit_core::write_predictions(&self.inner, std::io::BufWriter::new(file), format).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.id.clone()).collect()
    }

    #[getter]
    fn p(&self) -> Vec<f64> {
        self.inner.records().iter().map(|r| r.p).collect()
    }

    #[getter]
    fn y(&self) -> Vec<u8> {
        self.inner.records().iter().map(|r| r.y).collect()
    }

    #[getter]
    fn identities(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.identity.clone()).collect()
    }

    /// `{identity: {"total", "positive", "negative"}}`.
    fn census<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let c = fairaudit_core::census(&self.inner).map_err(to_py)?;
        let json = serde_json::to_string(&c.counts).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        json_loads(py, &json)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PredictionSet(name={:?}, n={})", self.inner.name(), self.inner.len())
    }
}

#[pyfunction]
fn auc(p: Vec<f64>, y: Vec<u8>) -> PyResult<f64> {
    Ok(ranking::auc(&p, &y).map_err(to_py)?.value)
}

#[pyfunction]
#[pyo3(signature = (p, y, bins=15))]
fn ece(p: Vec<f64>, y: Vec<u8>, bins: usize) -> PyResult<f64> {
    calibration::ece(&p, &y, bins).map_err(to_py)
}

#[pyfunction]
fn subgroup_auc(set: &PyPredictionSet, identity: &str) -> PyResult<f64> {
    Ok(ranking::subgroup_auc(&set.inner, identity).map_err(to_py)?.value)
}

#[pyfunction]
fn bpsn_auc(set: &PyPredictionSet, identity: &str) -> PyResult<f64> {
    Ok(ranking::bpsn_auc(&set.inner, identity).map_err(to_py)?.value)
}

#[pyfunction]
fn bnsp_auc(set: &PyPredictionSet, identity: &str) -> PyResult<f64> {
    Ok(ranking::bnsp_auc(&set.inner, identity).map_err(to_py)?.value)
}

/// Subgroup ECE minus background ECE.
#[pyfunction]
#[pyo3(signature = (set, identity, bins=15))]
fn calib_gap(set: &PyPredictionSet, identity: &str, bins: usize) -> PyResult<f64> {
    Ok(calibration::calib_gap(&set.inner, identity, bins).map_err(to_py)?.gap)
}

/// Subgroup error rate minus background error rate.
#[pyfunction]
#[pyo3(signature = (set, identity, threshold=0.5))]
fn error_gap(set: &PyPredictionSet, identity: &str, threshold: f64) -> PyResult<f64> {
    Ok(ranking::error_gap(&set.inner, identity, threshold).map_err(to_py)?.gap)
}

/// Grid-searched temperature minimizing NLL on `set`.
#[pyfunction]
fn fit_temperature(set: &PyPredictionSet) -> PyResult<f64> {
    Ok(posthoc::fit_temperature(&set.inner).map_err(to_py)?.t_star)
}

#[pyfunction]
fn apply_temperature(set: &PyPredictionSet, t: f64) -> PyResult<PyPredictionSet> {
    Ok(PyPredictionSet { inner: posthoc::apply_temperature(&set.inner, t).map_err(to_py)? })
}

#[pyfunction]
#[pyo3(signature = (set, coverage_grid, identities, threshold=0.5))]
fn risk_coverage<'py>(
    py: Python<'py>,
    set: &PyPredictionSet,
    coverage_grid: Vec<f64>,
    identities: Vec<String>,
    threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let curve = posthoc::risk_coverage_curve(&set.inner, &coverage_grid, threshold, &identities).map_err(to_py)?;
    let json = serde_json::to_string(&curve).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_loads(py, &json)
}

fn pair(sets: Vec<PyRef<'_, PyPredictionSet>>) -> PyResult<PairedPredictions> {
    let named = sets.iter().map(|s| (s.inner.name().to_string(), s.inner.clone())).collect();
    PairedPredictions::new(named).map_err(to_py)
}

/// Full audit of paired prediction sets; methods are named by each set's name.
/// Returns the report as a dict and writes it to `out` when given.
#[pyfunction]
#[pyo3(signature = (
    sets, validation=None, seed=42, iterations=1000, min_n=50, bins=15, threshold=0.5,
    coverage_grid=None, top_k=5, baseline=None, workers=None, out=None,
))]
#[allow(clippy::too_many_arguments)]
fn audit<'py>(
    py: Python<'py>,
    sets: Vec<PyRef<'py, PyPredictionSet>>,
    validation: Option<Vec<PyRef<'py, PyPredictionSet>>>,
    seed: u64,
    iterations: usize,
    min_n: usize,
    bins: usize,
    threshold: f64,
    coverage_grid: Option<Vec<f64>>,
    top_k: usize,
    baseline: Option<String>,
    workers: Option<usize>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut input = AuditInput::new(pair(sets)?);
    input.validation = validation.map(pair).transpose()?;
    let defaults = AuditSettings::default();
    let settings = AuditSettings {
        seed,
        n_iterations: iterations,
        min_n,
        bins,
        threshold,
        coverage_grid: coverage_grid.unwrap_or(defaults.coverage_grid),
        top_k,
        baseline,
        workers,
    };
    let (report, json) = py
        .detach(|| {
            let report = report::run_audit(&input, &settings)?;
            let json = report.to_json()?;
            Ok::<_, Error>((report, json))
        })
        .map_err(to_py)?;
    if let Some(dir) = out {
        report::write_report(&report, &dir).map_err(to_py)?;
    }
    json_loads(py, &json)
}

/// Renders a report JSON string as markdown.
#[pyfunction]
fn render_markdown(report_json: &str) -> PyResult<String> {
    let report = AuditReport::from_json(report_json).map_err(to_py)?;
    Ok(report::render_markdown(&report))
}

/// Trains one linear classifier on synthetic group data and scores a fresh
/// draw (seed `test_seed`, default `seed + 1`).
/// Returns `(predictions, {"weights", "bias", "average_error", "worst_group_error"})`.
#[pyfunction]
#[pyo3(signature = (method="erm", seed=42, test_seed=None, n=20000, d=5, epochs=5, batch_size=16, lr=0.05))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    method: &str,
    seed: u64,
    test_seed: Option<u64>,
    n: usize,
    d: usize,
    epochs: usize,
    batch_size: usize,
    lr: f64,
) -> PyResult<(PyPredictionSet, Bound<'py, PyAny>)> {
    let method: Method = method.parse().map_err(to_py)?;
    let config = TrainConfig { method, seed, epochs, batch_size, lr0: lr, ..TrainConfig::default() };
    let spec = GroupSpec::default();
    let test_seed = test_seed.unwrap_or(seed.wrapping_add(1));
    let (set, model, summary) = py
        .detach(|| {
            let train_data = synth::generate_training_data(seed, n, d, &spec)?;
            let test_data = synth::generate_training_data(test_seed, n, d, &spec)?;
            let out = trainers::train(&train_data, &config)?;
            let summary = trainers::error_summary(&out.model, &test_data)?;
            let set = trainers::predictions(&out.model, &test_data, method.name())?;
            Ok::<_, Error>((set, out.model, summary))
        })
        .map_err(to_py)?;
    let info = serde_json::json!({
        "weights": model.weights,
        "bias": model.bias,
        "average_error": summary.average,
        "worst_group_error": summary.worst_group,
    });
    Ok((PyPredictionSet { inner: set }, json_loads(py, &info.to_string())?))
}

#[pymodule]
fn fairaudit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyPredictionSet>()?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(subgroup_auc, m)?)?;
    m.add_function(wrap_pyfunction!(bpsn_auc, m)?)?;
    m.add_function(wrap_pyfunction!(bnsp_auc, m)?)?;
    m.add_function(wrap_pyfunction!(calib_gap, m)?)?;
    m.add_function(wrap_pyfunction!(error_gap, m)?)?;
    m.add_function(wrap_pyfunction!(fit_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(apply_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(risk_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(render_markdown, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
