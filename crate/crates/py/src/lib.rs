//! Python bindings for `fleetwatch-core`.

use std::collections::BTreeMap;

use fleetwatch_core as core;
use fleetwatch_core::{ClusterKey, Label, Timestamp};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: core::Error) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn put_err(e: core::tsdb::PutError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type PutTuple = (String, u64, f64, Vec<(String, String)>);
/// `(hour, value, label, lower, upper)`
type LabelRow = (u64, f64, String, f64, f64);

fn cluster(s: &str) -> PyResult<ClusterKey> {
    s.parse().map_err(to_py)
}

#[pyfunction]
fn hour_floor(ts: u64) -> u64 {
    core::hour_floor(Timestamp(ts)).secs()
}

/// `None` when either input is constant or the lengths differ.
#[pyfunction]
fn pearson_correlation(a: Vec<f64>, b: Vec<f64>) -> Option<f64> {
    core::pearson_correlation(&a, &b)
}

#[pyfunction]
#[pyo3(signature = (metric, timestamp, value, tags=Vec::new()))]
fn encode_put(
    metric: String,
    timestamp: u64,
    value: f64,
    tags: Vec<(String, String)>,
) -> PyResult<String> {
    core::encode_put(&core::PutLine::new(
        metric,
        Timestamp(timestamp),
        value,
        tags,
    ))
    .map_err(put_err)
}

/// Returns `(metric, timestamp, value, tags)`.
#[pyfunction]
fn parse_put(line: &str) -> PyResult<PutTuple> {
    let p = core::parse_put(line).map_err(put_err)?;
    Ok((p.metric, p.timestamp.secs(), p.value, p.tags))
}

/// Hourly values starting at `start_hour`; `None` marks a gap.
#[pyfunction]
#[pyo3(signature = (values, p, start_hour=0))]
fn change_metric(values: Vec<Option<f64>>, p: u32, start_hour: u64) -> PyResult<Vec<Option<f64>>> {
    if p == 0 {
        return Err(PyValueError::new_err("p must be positive"));
    }
    let series = core::HourlySeries::new(Timestamp(start_hour), values).map_err(to_py)?;
    let key = ClusterKey::all()[0];
    let mut d = core::change_metric(&series, p, key).d;
    // HourlySeries trims trailing gaps; give the caller back its own length
    d.resize(series.len().max(d.len()), None);
    Ok(d)
}

#[pyfunction]
fn f1(precision: f64, recall: f64) -> f64 {
    core::f1(precision, recall)
}

/// Returns `(tp, fp, fn)` for per-hour labels against truth hours.
#[pyfunction]
#[pyo3(signature = (labels, truth, tolerance=0))]
fn confusion(
    labels: Vec<(u64, String)>,
    truth: Vec<u64>,
    tolerance: u32,
) -> PyResult<(usize, usize, usize)> {
    let labels = labels
        .into_iter()
        .map(|(t, l)| Ok((Timestamp(t), l.parse::<Label>().map_err(to_py)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let truth = truth.into_iter().map(Timestamp).collect();
    let c = core::confusion(&labels, &truth, tolerance).map_err(to_py)?;
    Ok((c.tp, c.fp, c.fn_))
}

#[pyfunction]
#[pyo3(signature = (labels, beta_max=3.0))]
fn shrink_beta(labels: Vec<String>, beta_max: f64) -> PyResult<f64> {
    let labels = labels
        .iter()
        .map(|l| l.parse::<Label>().map_err(to_py))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(core::detector::shrink_beta(&labels, beta_max))
}

#[pyclass(name = "PipelineConfig", from_py_object)]
#[derive(Clone, Default)]
struct PyConfig {
    inner: core::PipelineConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, overridden by `key=value` text and then keyword arguments.
    #[new]
    #[pyo3(signature = (text=None, **overrides))]
    fn new(
        text: Option<&str>,
        overrides: Option<BTreeMap<String, Bound<'_, PyAny>>>,
    ) -> PyResult<Self> {
        let mut inner = match text {
            Some(t) => core::PipelineConfig::parse(t).map_err(to_py)?,
            None => core::PipelineConfig::default(),
        };
        for (key, value) in overrides.unwrap_or_default() {
            let value = match value.extract::<Vec<u32>>() {
                Ok(list) => list
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
                Err(_) => value.str()?.to_string(),
            };
            inner.set(&key, &value).map_err(to_py)?;
        }
        inner.validate().map_err(to_py)?;
        Ok(PyConfig { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(to_py)?;
        next.validate().map_err(to_py)?;
        self.inner = next;
        Ok(())
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn l(&self) -> usize {
        self.inner.l
    }

    #[getter]
    fn p_values(&self) -> Vec<u32> {
        self.inner.p_values.clone()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn x(&self) -> u32 {
        self.inner.x
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn beta_max(&self) -> f64 {
        self.inner.beta_max
    }

    #[getter]
    fn training_len(&self) -> usize {
        self.inner.training_len
    }

    #[getter]
    fn detect_p(&self) -> u32 {
        self.inner.detect_p
    }

    #[getter]
    fn beta_policy(&self) -> String {
        self.inner.beta_policy.to_string()
    }

    fn __repr__(&self) -> String {
        format!("PipelineConfig({:?})", self.inner.to_text())
    }
}

/// Streaming detector over one change-metric series.
#[pyclass(name = "Detector")]
struct PyDetector {
    state: core::DetectorState,
}

#[pymethods]
impl PyDetector {
    #[new]
    #[pyo3(signature = (training, config=None))]
    fn new(training: Vec<f64>, config: Option<PyConfig>) -> PyResult<Self> {
        let cfg = config.unwrap_or_default().inner;
        let state = core::DetectorState::init(&training, core::DetectorConfig::from(&cfg))
            .map_err(to_py)?;
        Ok(PyDetector { state })
    }

    /// Label one point. Returns `(label, mu, sigma, beta)` as judged before
    /// the point was folded in.
    fn step(&mut self, d: f64) -> (String, f64, f64, f64) {
        let s = self.state.step(d);
        (s.label.to_string(), s.mu, s.sigma, s.beta)
    }

    fn run(&mut self, values: Vec<f64>) -> Vec<String> {
        values
            .into_iter()
            .map(|d| self.state.step(d).label.to_string())
            .collect()
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.state.mean()
    }

    #[getter]
    fn std_dev(&self) -> f64 {
        self.state.std_dev()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.state.beta()
    }

    /// `(sum, sum_sq, weight)`
    #[getter]
    fn sums(&self) -> (f64, f64, f64) {
        self.state.sums()
    }
}

#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: core::Scenario,
}

#[pymethods]
impl PyScenario {
    /// The built-in scenario, or one parsed from scenario-file text.
    #[new]
    #[pyo3(signature = (text=None, seed=None))]
    fn new(text: Option<&str>, seed: Option<u64>) -> PyResult<Self> {
        let mut inner = match text {
            Some(t) => core::Scenario::parse(t).map_err(to_py)?,
            None => core::Scenario::default_incidents(),
        };
        if let Some(seed) = seed {
            inner.seed = seed;
        }
        Ok(PyScenario { inner })
    }

    fn without_incidents(&self) -> Self {
        PyScenario {
            inner: self.inner.clone().without_incidents(),
        }
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn campaigns(&self) -> usize {
        self.inner.campaigns
    }

    #[getter]
    fn eval_cluster(&self) -> String {
        self.inner.eval_cluster.to_string()
    }

    /// Simulate, select stable campaigns at go-live, detect and score.
    #[pyo3(signature = (config=None))]
    fn run(&self, py: Python<'_>, config: Option<PyConfig>) -> PyResult<ScenarioResult> {
        let cfg = config.unwrap_or_default().inner;
        let scenario = self.inner.clone();
        let eval_cluster = scenario.eval_cluster;
        let run = py
            .detach(move || core::run_scenario(&scenario, &cfg))
            .map_err(to_py)?;
        Ok(ScenarioResult::from_run(run, eval_cluster))
    }
}

#[pyclass(get_all, from_py_object)]
#[derive(Clone)]
struct ClusterReport {
    cluster: String,
    tp: usize,
    fp: usize,
    fn_: usize,
    precision: f64,
    recall: f64,
    f1: f64,
    /// `(first_hour, duration_hours, latency_hours)` per incident; the
    /// latency is `None` when the incident was never flagged.
    latencies: Vec<(u64, u64, Option<u64>)>,
    notes: Vec<String>,
}

#[pymethods]
impl ClusterReport {
    fn __repr__(&self) -> String {
        format!(
            "ClusterReport({}, tp={}, fp={}, fn={}, f1={:.4})",
            self.cluster, self.tp, self.fp, self.fn_, self.f1
        )
    }
}

#[pyclass]
struct ScenarioResult {
    #[pyo3(get)]
    stable_ids: Vec<String>,
    #[pyo3(get)]
    eval_cluster: String,
    #[pyo3(get)]
    warnings: Vec<String>,
    reports: Vec<ClusterReport>,
    labels: BTreeMap<ClusterKey, Vec<core::LabeledPoint>>,
}

impl ScenarioResult {
    fn from_run(run: core::ScenarioRun, eval_cluster: ClusterKey) -> Self {
        let reports = run
            .reports
            .iter()
            .map(|r| ClusterReport {
                cluster: r.cluster.map(|c| c.to_string()).unwrap_or_default(),
                tp: r.confusion.tp,
                fp: r.confusion.fp,
                fn_: r.confusion.fn_,
                precision: r.precision,
                recall: r.recall,
                f1: r.f1,
                latencies: r
                    .latencies
                    .iter()
                    .map(|l| (l.start.secs(), l.duration_hours, l.latency_hours))
                    .collect(),
                notes: r.notes.clone(),
            })
            .collect();
        ScenarioResult {
            stable_ids: run.detection.stable.campaign_ids.iter().cloned().collect(),
            eval_cluster: eval_cluster.to_string(),
            warnings: run.detection.warnings.clone(),
            reports,
            labels: run.detection.labels,
        }
    }
}

#[pymethods]
impl ScenarioResult {
    /// Reports for every labeled cluster.
    #[getter]
    fn reports(&self) -> Vec<ClusterReport> {
        self.reports.clone()
    }

    /// Report for one cluster, e.g. `"channel:display"`; the scored cluster by default.
    #[pyo3(signature = (cluster=None))]
    fn report(&self, cluster: Option<&str>) -> PyResult<ClusterReport> {
        let key = cluster.unwrap_or(&self.eval_cluster);
        let key = cluster_key_string(key)?;
        self.reports
            .iter()
            .find(|r| r.cluster == key)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("no report for {key}")))
    }

    /// `(hour, value, label, lower, upper)` for each labeled hour.
    #[pyo3(signature = (cluster=None))]
    fn labels(&self, cluster: Option<&str>) -> PyResult<Vec<LabelRow>> {
        let key = crate::cluster(cluster.unwrap_or(&self.eval_cluster))?;
        Ok(self
            .labels
            .get(&key)
            .map(|points| {
                points
                    .iter()
                    .map(|p| {
                        (
                            p.hour.secs(),
                            p.value,
                            p.label().to_string(),
                            p.step.lower(),
                            p.step.upper(),
                        )
                    })
                    .collect()
            })
            .unwrap_or_default())
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioResult(stable={}, clusters={})",
            self.stable_ids.len(),
            self.labels.len()
        )
    }
}

fn cluster_key_string(s: &str) -> PyResult<String> {
    Ok(cluster(s)?.to_string())
}

/// Append-only put-line store on disk.
#[pyclass(name = "FileStore")]
struct PyFileStore {
    inner: core::FileStore,
}

#[pymethods]
impl PyFileStore {
    #[new]
    fn new(root: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyFileStore {
            inner: core::FileStore::open(root).map_err(to_py)?,
        })
    }

    fn append_lines(&self, lines: Vec<String>) -> PyResult<usize> {
        let parsed = lines
            .iter()
            .map(|l| core::parse_put(l).map_err(put_err))
            .collect::<PyResult<Vec<_>>>()?;
        self.inner.append_all(&parsed).map_err(to_py)?;
        Ok(parsed.len())
    }

    /// Points of one series, last write wins per timestamp.
    #[pyo3(signature = (metric, tags=BTreeMap::new()))]
    fn read(&self, metric: &str, tags: BTreeMap<String, String>) -> PyResult<Vec<(u64, f64)>> {
        let raw = self.inner.read(metric, &tags, None).map_err(to_py)?;
        Ok(raw.points.into_iter().map(|(t, v)| (t.secs(), v)).collect())
    }

    fn keys(&self) -> PyResult<Vec<(String, BTreeMap<String, String>)>> {
        self.inner.keys().map_err(to_py)
    }
}

#[pymodule]
pub fn fleetwatch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hour_floor, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(encode_put, m)?)?;
    m.add_function(wrap_pyfunction!(parse_put, m)?)?;
    m.add_function(wrap_pyfunction!(change_metric, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(shrink_beta, m)?)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDetector>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<ClusterReport>()?;
    m.add_class::<ScenarioResult>()?;
    m.add_class::<PyFileStore>()?;
    m.add(
        "CLUSTERS",
        ClusterKey::all()
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>(),
    )?;
    Ok(())
}
