//! Python bindings. Results that are records in Rust come back as plain
//! dicts and lists.

use std::collections::BTreeSet;

use dybw::config::ExperimentConfig;
use dybw::consensus::build_metropolis;
use dybw::engine::Simulation;
use dybw::experiment;
use dybw::scheduler::{ParticipationPlan, StrategyConfig};
use dybw::straggler::{duration_full, duration_partial, DelayDraw};
use dybw::topology::{coverage_path, generate_graph, GraphKind};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: dybw::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Graph", module = "dybw", frozen)]
#[derive(Clone)]
struct PyGraph {
    inner: dybw::Graph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        dybw::Graph::new(n, edges).map(|inner| Self { inner }).map_err(err)
    }

    /// kind: "ring", "path", "complete" or "random".
    #[staticmethod]
    #[pyo3(signature = (kind, n, p = 0.5, seed = 0))]
    fn generate(kind: &str, n: usize, p: f64, seed: u64) -> PyResult<Self> {
        let kind = match kind {
            "ring" => GraphKind::Ring,
            "path" => GraphKind::Path,
            "complete" => GraphKind::Complete,
            "random" => GraphKind::Random { p },
            other => return Err(PyValueError::new_err(format!("unknown graph kind `{other}`"))),
        };
        generate_graph(n, kind, seed).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().iter().copied().collect()
    }

    fn neighbors(&self, j: usize) -> PyResult<Vec<usize>> {
        Ok(self.inner.neighbors(j).map_err(err)?.into_iter().collect())
    }

    fn is_connected(&self) -> bool {
        self.inner.is_connected()
    }

    /// Links DTUR establishes once per epoch.
    fn coverage_path(&self) -> PyResult<Vec<(usize, usize)>> {
        Ok(coverage_path(&self.inner).map_err(err)?.links().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, edges={})", self.inner.n(), self.inner.edges().len())
    }
}

fn sets(active_sets: Vec<Vec<usize>>) -> Vec<BTreeSet<usize>> {
    active_sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Metropolis mixing matrix for the given active neighbor sets.
#[pyfunction]
#[pyo3(signature = (graph, active_sets, iteration = 1))]
fn metropolis(graph: &PyGraph, active_sets: Vec<Vec<usize>>, iteration: usize) -> PyResult<Vec<Vec<f64>>> {
    let p = build_metropolis(&graph.inner, &sets(active_sets), iteration).map_err(err)?;
    Ok(p.entries().rows())
}

#[pyclass(name = "Scheduler", module = "dybw")]
struct PyScheduler {
    graph: dybw::Graph,
    inner: dybw::Scheduler,
    k: usize,
}

#[pymethods]
impl PyScheduler {
    /// strategy: "full", "static_p" (with p, default ceil(degree / 2)) or "dtur".
    #[new]
    #[pyo3(signature = (graph, strategy = "dtur", p = None))]
    fn new(graph: &PyGraph, strategy: &str, p: Option<Vec<usize>>) -> PyResult<Self> {
        let g = graph.inner.clone();
        let strategy = match strategy {
            "full" => StrategyConfig::Full,
            "static_p" => StrategyConfig::StaticP {
                p: p.unwrap_or_else(|| StrategyConfig::default_static_p(&g)),
            },
            "dtur" => StrategyConfig::Dtur,
            other => return Err(PyValueError::new_err(format!("unknown strategy `{other}`"))),
        };
        let path = Some(coverage_path(&g).map_err(err)?);
        let inner = dybw::Scheduler::new(&g, strategy, path).map_err(err)?;
        Ok(Self { graph: g, inner, k: 0 })
    }

    /// Plan for the next iteration given each worker's compute time.
    fn next_plan<'py>(&mut self, py: Python<'py>, times: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let d = DelayDraw::new(self.k + 1, times).map_err(err)?;
        let plan = self.inner.next_plan(&self.graph, &d).map_err(err)?;
        self.k += 1;
        to_py(py, &plan)
    }
}

#[pyfunction]
fn iteration_duration_full(times: Vec<f64>) -> PyResult<f64> {
    Ok(duration_full(&DelayDraw::new(1, times).map_err(err)?))
}

/// Duration when every worker waits only for its active neighbors.
#[pyfunction]
fn iteration_duration_partial(times: Vec<f64>, active_sets: Vec<Vec<usize>>) -> PyResult<f64> {
    let d = DelayDraw::new(1, times).map_err(err)?;
    let plan = ParticipationPlan {
        iteration: 1,
        active_sets: sets(active_sets),
        theta: None,
        established_edge: None,
    };
    duration_partial(&d, &plan).map_err(err)
}

#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default_synthetic().to_json_pretty()
}

fn parse(config: &str, overrides: Vec<String>) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_json_str_with_overrides(config, &overrides).map_err(err)
}

/// One run of the configured strategy. Returns the per-iteration records,
/// the summary and the final parameters.
#[pyfunction]
#[pyo3(signature = (config, seed = None, overrides = Vec::new()))]
fn simulate<'py>(
    py: Python<'py>,
    config: &str,
    seed: Option<u64>,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse(config, overrides)?;
    let seed = seed.unwrap_or(cfg.seed);
    let result = py
        .detach(|| Simulation::from_config(&cfg, seed).and_then(|s| s.run()))
        .map_err(err)?;
    let out = serde_json::json!({
        "summary": experiment::Summary::of(&result),
        "records": result.records,
        "final_params": result.final_params,
    });
    to_py(py, &out)
}

/// Full, static-p and DTUR on the same seed and delay draws.
#[pyfunction]
#[pyo3(signature = (config, seed = None, overrides = Vec::new()))]
fn compare<'py>(
    py: Python<'py>,
    config: &str,
    seed: Option<u64>,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse(config, overrides)?;
    let seed = seed.unwrap_or(cfg.seed);
    let static_p = cfg.static_p.clone();
    let (cmp, _) = py
        .detach(|| Simulation::from_config(&cfg, seed).and_then(|s| experiment::compare_one(&s, static_p)))
        .map_err(err)?;
    to_py(py, &cmp)
}

/// Runs the assumption checks; returns (name, passed, detail) rows.
#[pyfunction]
#[pyo3(signature = (config, overrides = Vec::new()))]
fn check(py: Python<'_>, config: &str, overrides: Vec<String>) -> PyResult<Vec<(String, bool, String)>> {
    let cfg = parse(config, overrides)?;
    let report = py.detach(|| experiment::check(&cfg, cfg.seed, false)).map_err(err)?;
    Ok(report.rows.into_iter().map(|r| (r.name, r.passed, r.detail)).collect())
}

#[pymodule]
#[pyo3(name = "dybw")]
fn dybw_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyScheduler>()?;
    m.add_function(wrap_pyfunction!(metropolis, m)?)?;
    m.add_function(wrap_pyfunction!(iteration_duration_full, m)?)?;
    m.add_function(wrap_pyfunction!(iteration_duration_partial, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    Ok(())
}
