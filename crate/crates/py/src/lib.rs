//! Python bindings for the simulator: build or load scenarios, run them,
//! and read back event logs and metric reports without leaving Python.
//!
//! The compiled module imports as `fusesim_py`:
//!
//! ```python
//! import fusesim_py as fz
//! s = fz.Scenario("demo", seed=7, controller="baseline")
//! s.inject(5.0, "U09")
//! result = fz.run(s)
//! print(result.report()["ratio"])
//! ```

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use fusesim::injector;
use fusesim::lifecycle::{AdaptationAction, ParamValue};
use fusesim::log::EventLog;
use fusesim::managing::ControllerRegistry;
use fusesim::metrics::{self, compute_report, MetricsReport};
use fusesim::scenario::{InjectionSpec, Scenario, ScriptedAdaptation};
use fusesim::sim::run_scenario;

/// A runnable experiment description: pipeline timing, seed, managing
/// controller, injected uncertainties, and scripted adaptation commands.
#[pyclass(name = "Scenario", module = "fusesim_py", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (name, *, seed = 42, duration_secs = 20.0, frame_rate_hz = 10.0, controller = "none"))]
    fn new(name: &str, seed: u64, duration_secs: f64, frame_rate_hz: f64, controller: &str) -> Self {
        let mut inner = Scenario::default();
        inner.name = name.to_string();
        inner.seed = seed;
        inner.duration_secs = duration_secs;
        inner.frame_rate_hz = frame_rate_hz;
        inner.controller = controller.to_string();
        Self { inner }
    }

    /// Load a scenario from a TOML file (same format the CLI consumes).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Scenario::load(Path::new(path))
            .map(|inner| Self { inner })
            .map_err(PyValueError::new_err)
    }

    /// Schedule one uncertainty from the catalog (`U01`..`U11`).
    fn inject(&mut self, time: f64, uncertainty: &str) {
        self.inner
            .injections
            .push(InjectionSpec { time, uncertainty: uncertainty.to_string() });
    }

    /// Script a node restart at a fixed time.
    fn script_restart(&mut self, time: f64, target: &str) {
        self.push_adaptation(time, target, AdaptationAction::Restart);
    }

    /// Script a full node redeployment at a fixed time.
    fn script_redeploy(&mut self, time: f64, target: &str) {
        self.push_adaptation(time, target, AdaptationAction::Redeploy);
    }

    /// Script a boolean parameter assignment (e.g. fusion `recalibrate`).
    fn script_set_flag(&mut self, time: f64, target: &str, name: &str, value: bool) {
        self.push_adaptation(
            time,
            target,
            AdaptationAction::SetParameter {
                name: name.to_string(),
                value: ParamValue::Bool(value),
            },
        );
    }

    /// Raise `ValueError` listing every problem the scenario has.
    fn validate(&self) -> PyResult<()> {
        let known = ControllerRegistry::with_builtins().names();
        self.inner
            .validate(&known)
            .map_err(|problems| PyValueError::new_err(problems.join("; ")))
    }

    /// Serialize back to the TOML file format.
    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn controller(&self) -> &str {
        &self.inner.controller
    }

    #[setter]
    fn set_controller(&mut self, controller: &str) {
        self.inner.controller = controller.to_string();
    }

    #[getter]
    fn duration_secs(&self) -> f64 {
        self.inner.duration_secs
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, seed={}, duration_secs={}, controller={:?}, injections={}, scripted={})",
            self.inner.name,
            self.inner.seed,
            self.inner.duration_secs,
            self.inner.controller,
            self.inner.injections.len(),
            self.inner.adaptations.len(),
        )
    }
}

impl PyScenario {
    fn push_adaptation(&mut self, time: f64, target: &str, action: AdaptationAction) {
        self.inner.adaptations.push(ScriptedAdaptation {
            time,
            target: target.to_string(),
            action,
        });
    }
}

/// The outcome of one simulation run: the full event log plus the metric
/// report computed from it.
#[pyclass(name = "RunResult", module = "fusesim_py")]
struct PyRunResult {
    log: EventLog,
    report: MetricsReport,
}

#[pymethods]
impl PyRunResult {
    /// The complete event log, one JSON object per line.
    fn log_jsonl(&self) -> String {
        self.log.to_jsonl()
    }

    /// The metric report as a JSON string.
    fn report_json(&self) -> String {
        self.report.to_json_pretty()
    }

    /// The metric report as a plain Python dict.
    fn report(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let value: serde_json::Value = serde_json::from_str(&self.report.to_json_pretty())
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        json_to_py(py, &value)
    }

    #[getter]
    fn event_count(&self) -> usize {
        self.log.records().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(scenario={:?}, events={}, availability={:.4})",
            self.report.scenario,
            self.log.records().len(),
            self.report.availability,
        )
    }
}

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    use serde_json::Value;
    match value {
        Value::Null => Ok(py.None()),
        Value::Bool(b) => b.into_py_any(py),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py_any(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py_any(py)
            }
        }
        Value::String(s) => s.into_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py_any(py)
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (key, item) in map {
                dict.set_item(key, json_to_py(py, item)?)?;
            }
            dict.into_py_any(py)
        }
    }
}

/// Run a scenario under the built-in controller registry and return the
/// event log together with its metric report.
#[pyfunction]
fn run(scenario: &PyScenario) -> PyResult<PyRunResult> {
    let registry = ControllerRegistry::with_builtins();
    let known = registry.names();
    scenario
        .inner
        .validate(&known)
        .map_err(|problems| PyValueError::new_err(problems.join("; ")))?;
    let result = run_scenario(&scenario.inner, &registry).map_err(PyRuntimeError::new_err)?;
    let report = compute_report(&result.log, &scenario.inner);
    Ok(PyRunResult { log: result.log, report })
}

/// Mean intersection-over-union between two label masks.
#[pyfunction]
fn mean_iou(pred: Vec<u8>, truth: Vec<u8>, num_classes: usize) -> PyResult<f64> {
    if pred.len() != truth.len() {
        return Err(PyValueError::new_err(format!(
            "mask lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(metrics::mean_iou(&pred, &truth, num_classes))
}

/// Total downtime (seconds) of a publish stream with the given nominal
/// period, measured over `[0, t_end_ms]`.
#[pyfunction]
fn downtime(publish_ms: Vec<u64>, t_end_ms: u64, period_ms: u64) -> f64 {
    metrics::downtime_from_gaps(&publish_ms, t_end_ms, period_ms)
}

/// Identifiers of every injectable uncertainty, in catalog order.
#[pyfunction]
fn uncertainty_ids() -> Vec<String> {
    injector::catalog().iter().map(|u| u.id.to_string()).collect()
}

/// One dict per catalog entry: id, target node, criticality, description.
#[pyfunction]
fn uncertainty_catalog(py: Python<'_>) -> PyResult<Py<PyAny>> {
    let list = PyList::empty(py);
    for u in injector::catalog() {
        let entry = PyDict::new(py);
        entry.set_item("id", u.id)?;
        entry.set_item("target", u.target)?;
        entry.set_item("criticality", u.criticality().as_str())?;
        entry.set_item("description", u.description)?;
        list.append(entry)?;
    }
    list.into_py_any(py)
}

/// Names of the built-in managing controllers.
#[pyfunction]
fn controllers() -> Vec<String> {
    ControllerRegistry::with_builtins().names()
}

#[pymodule]
fn fusesim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(mean_iou, m)?)?;
    m.add_function(wrap_pyfunction!(downtime, m)?)?;
    m.add_function(wrap_pyfunction!(uncertainty_ids, m)?)?;
    m.add_function(wrap_pyfunction!(uncertainty_catalog, m)?)?;
    m.add_function(wrap_pyfunction!(controllers, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
