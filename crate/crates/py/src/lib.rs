//! Python bindings for the RSU scheduler and simulator.
//!
//! ```python
//! import rsusched
//! rep = rsusched.simulate({"request_rate": 4, "duration_s": 120}, "mlq(ds)")
//! print(rep.service_ratio(0), rep.service_ratio(1))
//! ```

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rsu_sched::cli::{self, set_param};
use rsu_sched::engine;
use rsu_sched::model::{self, Catalog, Clock, OpType, PriorityClass, Request, ServiceDecision};
use rsu_sched::sched::{PendingQueue, Policy, SchedContext};
use rsu_sched::traffic::ScenarioParams;
use rsu_sched::{metrics, SimReport};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_policy_spec(spec: &str) -> PyResult<Policy> {
    spec.parse::<Policy>().map_err(value_err)
}

fn parse_op(op: &str) -> PyResult<OpType> {
    match op.to_ascii_lowercase().as_str() {
        "download" => Ok(OpType::Download),
        "upload" => Ok(OpType::Upload),
        _ => Err(PyValueError::new_err(format!("unknown op `{op}`"))),
    }
}

fn op_name(op: OpType) -> &'static str {
    match op {
        OpType::Download => "download",
        OpType::Upload => "upload",
    }
}

fn params_from_dict(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<ScenarioParams> {
    let mut p = ScenarioParams::default();
    let mut p_class_set = false;
    if let Some(d) = overrides {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let text = if let Ok(b) = v.extract::<bool>() {
                b.to_string()
            } else if let Ok(xs) = v.extract::<Vec<f64>>() {
                xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
            } else {
                v.str()?.to_string()
            };
            p_class_set |= key == "p_class";
            if !set_param(&mut p, &key, &text).map_err(|e| value_err(format!("{key}: {e}")))? {
                return Err(PyValueError::new_err(format!("unknown key `{key}`")));
            }
        }
    }
    let n = p.num_classes as usize;
    if !p_class_set && n > 0 && p.p_class.len() != n {
        p.p_class = vec![1.0 / n as f64; n];
    }
    p.validate().map_err(value_err)?;
    Ok(p)
}

fn decision_dict<'py>(py: Python<'py>, d: &ServiceDecision) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("item_id", d.item_id)?;
    out.set_item("op", op_name(d.op))?;
    out.set_item("members", d.members.clone())?;
    out.set_item("value", d.value)?;
    out.set_item("start_us", d.start.0)?;
    out.set_item("finish_us", d.finish.0)?;
    Ok(out)
}

/// `(deadline - now) * size`; raises if the deadline has passed.
#[pyfunction]
fn ds_value(deadline_us: u64, now_us: u64, size: u64) -> PyResult<u128> {
    if deadline_us < now_us {
        return Err(PyValueError::new_err("deadline before now"));
    }
    Ok(model::ds_value(Clock(deadline_us), Clock(now_us), size))
}

/// Exact comparison of two D*S/N values given as `(slack_us, size, n)`.
/// Returns -1, 0 or 1.
#[pyfunction]
fn dsn_compare(a: (u64, u64, u64), b: (u64, u64, u64)) -> PyResult<i8> {
    if a.2 == 0 || b.2 == 0 {
        return Err(PyValueError::new_err("group size must be at least 1"));
    }
    let va = model::DsnValue { slack: a.0, size: a.1, n: a.2 };
    let vb = model::DsnValue { slack: b.0, size: b.1, n: b.2 };
    Ok(va.cmp(&vb) as i8)
}

/// Transfer time in microseconds of `size` bytes at `data_rate_bps`.
#[pyfunction]
fn service_time(size: u64, data_rate_bps: u64) -> PyResult<u64> {
    if data_rate_bps == 0 {
        return Err(PyValueError::new_err("data rate must be positive"));
    }
    Ok(engine::service_time(size, data_rate_bps))
}

/// Canonical form of a policy spec such as `mlq(dsn:median)`.
#[pyfunction]
fn parse_policy(spec: &str) -> PyResult<String> {
    Ok(parse_policy_spec(spec)?.to_string())
}

/// Outcome of one simulation run.
#[pyclass(name = "Report", frozen)]
struct PyReport {
    inner: SimReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn submitted(&self) -> u64 {
        self.inner.overall.submitted
    }

    #[getter]
    fn served(&self) -> u64 {
        self.inner.overall.served
    }

    /// Dropped before service plus still pending at the horizon.
    #[getter]
    fn expired(&self) -> u64 {
        self.inner.overall.lost()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    /// Served / submitted for `cls`, or overall. `None` when nothing was submitted.
    #[pyo3(signature = (cls=None))]
    fn service_ratio(&self, cls: Option<u8>) -> Option<f64> {
        metrics::service_ratio(&self.inner, cls.map(PriorityClass)).map(|f| f.to_f64())
    }

    /// Counters for one class (or overall) as a dict.
    #[pyo3(signature = (cls=None))]
    fn counts<'py>(&self, py: Python<'py>, cls: Option<u8>) -> PyResult<Bound<'py, PyDict>> {
        let s = self
            .inner
            .slice(cls.map(PriorityClass))
            .ok_or_else(|| PyValueError::new_err("no such class"))?;
        let d = PyDict::new(py);
        d.set_item("submitted", s.submitted)?;
        d.set_item("served", s.served)?;
        d.set_item("expired", s.expired)?;
        d.set_item("residual", s.residual)?;
        d.set_item("mean_response_us", s.mean_response_us().map(|f| f.to_f64()))?;
        d.set_item("mean_broadcast_size", s.mean_broadcast_size().map(|f| f.to_f64()))?;
        Ok(d)
    }

    /// `{req_id: finish_us}` for every served request.
    fn finish_times(&self) -> Vec<(u64, u64)> {
        self.inner.served.iter().map(|(id, t)| (*id, t.0)).collect()
    }

    fn decisions<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.decisions.iter().map(|d| decision_dict(py, d)).collect()
    }

    fn __repr__(&self) -> String {
        let o = &self.inner.overall;
        format!("Report(submitted={}, served={}, expired={})", o.submitted, o.served, o.lost())
    }
}

/// Generates the workload for the given overrides and simulates it.
#[pyfunction]
#[pyo3(signature = (params=None, policy="mlq(ds)"))]
fn simulate(py: Python<'_>, params: Option<&Bound<'_, PyDict>>, policy: &str) -> PyResult<PyReport> {
    let p = params_from_dict(params)?;
    let policy = parse_policy_spec(policy)?;
    let inner = py
        .detach(|| engine::run(&p, policy))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyReport { inner })
}

/// Runs a config (`key=value` overrides) and returns the CSV text, exactly
/// as the `simulate`/`sweep` subcommands would write it.
#[pyfunction]
#[pyo3(signature = (overrides, config_text=None))]
fn run_csv(py: Python<'_>, overrides: Vec<String>, config_text: Option<&str>) -> PyResult<String> {
    let config = cli::parse_config(config_text.map(|t| ("<python>", t)), &overrides).map_err(value_err)?;
    py.detach(|| cli::run_sweep(&config)).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Mean/std aggregation of a run CSV.
#[pyfunction]
fn summarize_csv(text: &str) -> PyResult<String> {
    cli::summarize_csv(text).map_err(value_err)
}

/// A pending-request queue with a fixed catalog and channel, for driving
/// the selection policies directly.
#[pyclass(name = "Scheduler")]
struct PyScheduler {
    catalog: Catalog,
    data_rate_bps: u64,
    strict_completion: bool,
    queue: PendingQueue,
}

#[pymethods]
impl PyScheduler {
    #[new]
    #[pyo3(signature = (item_sizes, data_rate_bps=1_000_000, strict_completion=true))]
    fn new(item_sizes: Vec<u64>, data_rate_bps: u64, strict_completion: bool) -> PyResult<Self> {
        if item_sizes.is_empty() || item_sizes.contains(&0) {
            return Err(PyValueError::new_err("item sizes must be non-empty and positive"));
        }
        if data_rate_bps == 0 {
            return Err(PyValueError::new_err("data rate must be positive"));
        }
        Ok(PyScheduler {
            catalog: Catalog::from_sizes(item_sizes),
            data_rate_bps,
            strict_completion,
            queue: PendingQueue::new(),
        })
    }

    #[pyo3(signature = (req_id, item_id, deadline_us, op="download", cls=0, submitted_us=0, vehicle_id=0))]
    #[allow(clippy::too_many_arguments)]
    fn enqueue(
        &mut self,
        req_id: u64,
        item_id: u32,
        deadline_us: u64,
        op: &str,
        cls: u8,
        submitted_us: u64,
        vehicle_id: u64,
    ) -> PyResult<()> {
        if self.catalog.get(item_id).is_none() {
            return Err(PyValueError::new_err(format!("unknown item {item_id}")));
        }
        if deadline_us < submitted_us {
            return Err(PyValueError::new_err("deadline before submission"));
        }
        self.queue
            .enqueue(Request {
                req_id,
                vehicle_id,
                item_id,
                op: parse_op(op)?,
                deadline: Clock(deadline_us),
                class: PriorityClass(cls),
                submitted_at: Clock(submitted_us),
            })
            .map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.queue.len()
    }

    /// Removes requests that can no longer finish in time; returns their ids.
    fn drop_expired(&mut self, now_us: u64) -> Vec<u64> {
        let ctx = SchedContext {
            catalog: &self.catalog,
            data_rate_bps: self.data_rate_bps,
            strict_completion: self.strict_completion,
        };
        self.queue.drop_expired(Clock(now_us), &ctx)
    }

    /// Chooses, removes and returns the next decision, or `None`.
    fn select_next<'py>(
        &mut self,
        py: Python<'py>,
        now_us: u64,
        policy: &str,
    ) -> PyResult<Option<Bound<'py, PyDict>>> {
        let policy = parse_policy_spec(policy)?;
        let ctx = SchedContext {
            catalog: &self.catalog,
            data_rate_bps: self.data_rate_bps,
            strict_completion: self.strict_completion,
        };
        self.queue
            .select_next(Clock(now_us), policy, &ctx)
            .map(|d| decision_dict(py, &d))
            .transpose()
    }
}

#[pymodule]
fn rsusched(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ds_value, m)?)?;
    m.add_function(wrap_pyfunction!(dsn_compare, m)?)?;
    m.add_function(wrap_pyfunction!(service_time, m)?)?;
    m.add_function(wrap_pyfunction!(parse_policy, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_csv, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_csv, m)?)?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyScheduler>()?;
    m.add("CSV_HEADER", cli::CSV_HEADER)?;
    Ok(())
}
