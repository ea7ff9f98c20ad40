//! Python bindings for `meshshare`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use meshshare::harness::{self, Scenario as CoreScenario};
use meshshare::transfer::session;
use meshshare::{BlockRange, DeviceId, FileMeta, Params};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Hex SHA-256 content id of `data`.
#[pyfunction]
fn file_id(data: &[u8]) -> String {
    meshshare::compute_file_id(data).to_hex()
}

/// Number of blocks `size` bytes split into.
#[pyfunction]
#[pyo3(signature = (size, block_size = meshshare::BLOCK_SIZE))]
fn block_count(size: u64, block_size: u64) -> u32 {
    FileMeta::new("", &vec![0u8; size as usize], block_size).block_count
}

#[pyfunction]
fn partition_blocks(start: u32, end: u32, parts: u32) -> Vec<(u32, u32)> {
    session::partition_blocks(BlockRange::new(start, end), parts)
        .into_iter()
        .map(|r| (r.start, r.end))
        .collect()
}

/// Round-robin split of blocks `start..end` over `sources`.
#[pyfunction]
fn assign_blocks(start: u32, end: u32, sources: Vec<u64>) -> BTreeMap<u64, Vec<u32>> {
    let sources: Vec<DeviceId> = sources.into_iter().map(DeviceId).collect();
    session::assign_blocks(BlockRange::new(start, end), &sources)
        .into_iter()
        .map(|(d, v)| (d.0, v))
        .collect()
}

#[pyfunction]
fn default_params() -> BTreeMap<&'static str, u64> {
    Params::default().to_map()
}

#[pyclass(name = "Ssid", frozen, eq, ord, hash, skip_from_py_object)]
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct PySsid(meshshare::Ssid);

#[pymethods]
impl PySsid {
    #[new]
    fn new(root_id: u64, nonce: u32) -> Self {
        PySsid(meshshare::Ssid::new(DeviceId(root_id), nonce))
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        meshshare::Ssid::parse(text).map(PySsid).map_err(value_error)
    }

    #[getter]
    fn root_id(&self) -> u64 {
        self.0.root_id.0
    }

    #[getter]
    fn nonce(&self) -> u32 {
        self.0.nonce
    }

    fn passphrase(&self) -> String {
        meshshare::derive_passphrase(&self.0).as_str().to_string()
    }

    fn __str__(&self) -> String {
        self.0.render()
    }

    fn __repr__(&self) -> String {
        format!("Ssid('{}')", self.0.render())
    }
}

#[pyclass(name = "Scenario")]
struct PyScenario(CoreScenario);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreScenario::load(&path).map(PyScenario).map_err(value_error)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        CoreScenario::from_toml(text).map(PyScenario).map_err(value_error)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn duration(&self) -> u64 {
        self.0.duration
    }

    #[getter]
    fn params(&self) -> BTreeMap<&'static str, u64> {
        self.0.params.to_map()
    }

    #[getter]
    fn devices(&self) -> Vec<u64> {
        self.0.devices.iter().map(|d| d.id.0).collect()
    }

    /// Overrides one parameter, e.g. `set("hop_latency", 500)`.
    fn set(&mut self, name: &str, value: u64) -> PyResult<()> {
        self.0.apply_overrides(&[format!("{name}={value}")]).map_err(value_error)
    }

    #[pyo3(signature = (until = None))]
    fn run(&self, py: Python<'_>, until: Option<u64>) -> RunResult {
        let outcome = py.detach(|| harness::run(&self.0, until));
        RunResult {
            succeeded: outcome.succeeded(),
            trace: outcome.world.trace_jsonl(),
            metrics: outcome.metrics.to_json(),
            report: outcome.metrics.report(),
        }
    }
}

#[pyclass(frozen)]
struct RunResult {
    #[pyo3(get)]
    succeeded: bool,
    #[pyo3(get)]
    trace: String,
    #[pyo3(get)]
    metrics: String,
    #[pyo3(get)]
    report: String,
}

/// Parses scenario TOML, raising ValueError with a line number on failure.
#[pyfunction]
fn validate_scenario(text: &str) -> PyResult<()> {
    CoreScenario::from_toml(text).map(|_| ()).map_err(value_error)
}

#[pymodule(name = "meshshare")]
fn meshshare_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(file_id, m)?)?;
    m.add_function(wrap_pyfunction!(block_count, m)?)?;
    m.add_function(wrap_pyfunction!(partition_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(assign_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(default_params, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_class::<PySsid>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<RunResult>()?;
    Ok(())
}
