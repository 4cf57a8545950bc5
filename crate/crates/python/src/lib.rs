//! Python bindings: scenario normalization, script scaffolding, result
//! interpretation, the knowledge index, and whole chat sessions.
//!
//! Structured results cross the boundary as plain Python dicts and lists,
//! built from the same JSON the HTTP API returns.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde_json::Value;

use genonet_core::clock::SystemClock;
use genonet_core::codegen::{self, lint_structure, Dialect, GeneratedArtifact};
use genonet_core::config::ServiceConfig;
use genonet_core::interpret::{self, InterpretInput, SummaryStyle};
use genonet_core::orchestrator::{Attachment, Orchestrator, OrchestratorError, SessionOverrides};
use genonet_core::retrieval::{Bm25Params, ChunkingPolicy, KnowledgeIndex};
use genonet_core::scenario::{self, RawSpecDraft, ScenarioSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Converts any serializable value into native Python objects.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn parse_dialect(name: &str) -> PyResult<Dialect> {
    match name {
        "cpp" | "c++" => Ok(Dialect::Cpp),
        "python" | "py" => Ok(Dialect::Python),
        other => Err(PyValueError::new_err(format!("unknown dialect {other:?}; expected cpp or python"))),
    }
}

/// A validated, unit-normalized scenario.
#[pyclass(name = "ScenarioSpec", module = "genonet", frozen)]
pub struct PyScenarioSpec {
    inner: ScenarioSpec,
}

#[pymethods]
impl PyScenarioSpec {
    /// Accepts either the normalized form produced by `to_json` or a draft
    /// with units, such as `{"frequency": "28 GHz", "bandwidth": "100 MHz", ...}`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = match serde_json::from_str::<ScenarioSpec>(text) {
            Ok(spec) => spec,
            Err(_) => {
                let draft: RawSpecDraft = serde_json::from_str(text).map_err(value_err)?;
                scenario::normalize_units(&draft).map_err(value_err)?
            }
        };
        let report = scenario::validate(&inner);
        if !report.ok {
            let messages: Vec<String> = report.violations.iter().map(|v| format!("{}: {}", v.field, v.message)).collect();
            return Err(PyValueError::new_err(messages.join("; ")));
        }
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.canonical_json()
    }

    /// `{"ok": bool, "violations": [...]}`.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &scenario::validate(&self.inner))
    }

    /// Hex digest of the canonical serialization.
    #[getter]
    fn digest(&self) -> String {
        scenario::spec_hash(&self.inner).to_hex()
    }

    #[getter]
    fn frequency_hz(&self) -> f64 {
        self.inner.frequency_hz
    }

    #[getter]
    fn bandwidth_hz(&self) -> f64 {
        self.inner.bandwidth_hz
    }

    #[getter]
    fn ue_count(&self) -> u32 {
        self.inner.ue_count
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("ScenarioSpec({})", self.inner.canonical_json())
    }
}

/// A generated simulation script.
#[pyclass(name = "Script", module = "genonet", frozen)]
pub struct PyScript {
    inner: GeneratedArtifact,
}

#[pymethods]
impl PyScript {
    #[getter]
    fn source(&self) -> &str {
        &self.inner.source
    }

    #[getter]
    fn file_name(&self) -> String {
        self.inner.file_name()
    }

    #[getter]
    fn spec_digest(&self) -> String {
        self.inner.spec_digest.to_hex()
    }

    fn section_ids(&self) -> Vec<String> {
        self.inner.section_ids()
    }

    fn section(&self, id: &str) -> PyResult<String> {
        self.inner
            .section_body(id)
            .map(str::to_string)
            .ok_or_else(|| PyKeyError::new_err(id.to_string()))
    }

    /// Names of the structural checks the script fails; empty when clean.
    fn lint(&self) -> Vec<&'static str> {
        lint_structure(&self.inner).failed()
    }
}

/// Deterministic script for `spec` in `dialect` (`cpp` or `python`).
#[pyfunction]
#[pyo3(signature = (spec, dialect = "cpp"))]
fn scaffold(spec: &PyScenarioSpec, dialect: &str) -> PyResult<PyScript> {
    let inner = codegen::scaffold(&spec.inner, parse_dialect(dialect)?, &SystemClock).map_err(value_err)?;
    Ok(PyScript { inner })
}

/// Per-flow metrics and a summary for a FlowMonitor XML document.
#[pyfunction]
fn interpret_flowmon<'py>(py: Python<'py>, xml: &str) -> PyResult<Bound<'py, PyAny>> {
    let flows = interpret::parse_flowmonitor(xml).map_err(value_err)?;
    to_py(py, &interpret::summarize(&InterpretInput::Flows(flows), SummaryStyle::Template, None))
}

/// Timeline and round-trip time for a program log.
#[pyfunction]
fn interpret_log<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    let log = interpret::parse_event_log(text);
    if log.events.is_empty() {
        return Err(PyValueError::new_err("no recognizable event lines"));
    }
    to_py(py, &interpret::summarize(&InterpretInput::Timeline(log.events), SummaryStyle::Template, None))
}

/// BM25 index over chunked documents.
#[pyclass(name = "KnowledgeIndex", module = "genonet")]
pub struct PyKnowledgeIndex {
    inner: KnowledgeIndex,
}

#[pymethods]
impl PyKnowledgeIndex {
    #[new]
    #[pyo3(signature = (chunk_size = None, overlap = None, k1 = None, b = None))]
    fn new(chunk_size: Option<usize>, overlap: Option<usize>, k1: Option<f64>, b: Option<f64>) -> Self {
        let mut policy = ChunkingPolicy::default();
        let mut params = Bm25Params::default();
        if let Some(v) = chunk_size {
            policy.chunk_size = v;
        }
        if let Some(v) = overlap {
            policy.overlap = v;
        }
        if let Some(v) = k1 {
            params.k1 = v;
        }
        if let Some(v) = b {
            params.b = v;
        }
        Self {
            inner: KnowledgeIndex::new(policy, params),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: KnowledgeIndex::load(&path).map_err(value_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(runtime_err)
    }

    /// Adds or replaces a document; returns its chunk count.
    fn ingest(&mut self, doc_id: &str, text: &str) -> PyResult<usize> {
        self.inner.ingest(doc_id, text).map_err(value_err)
    }

    fn ingest_dir(&mut self, dir: PathBuf) -> PyResult<Vec<(String, usize)>> {
        self.inner.ingest_dir(&dir).map_err(value_err)
    }

    /// `[(chunk_id, score), ...]`, best first.
    #[pyo3(signature = (text, k = 5))]
    fn query(&self, text: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        let hits = self.inner.query(text, k).map_err(value_err)?;
        Ok(hits.into_iter().map(|h| (h.chunk_id, h.score)).collect())
    }

    fn chunk_text(&self, chunk_id: &str) -> PyResult<String> {
        self.inner
            .chunk(chunk_id)
            .map(|c| c.text.clone())
            .ok_or_else(|| PyKeyError::new_err(chunk_id.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.chunk_count()
    }
}

/// An orchestrator hosting chat sessions.
#[pyclass(name = "Workbench", module = "genonet", frozen)]
pub struct PyWorkbench {
    inner: Arc<Orchestrator>,
}

impl PyWorkbench {
    fn build(config: ServiceConfig) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(config.build().map_err(runtime_err)?),
        })
    }
}

#[pymethods]
impl PyWorkbench {
    /// Configured from the `GENONET_*` environment variables.
    #[staticmethod]
    fn from_env() -> PyResult<Self> {
        Self::build(ServiceConfig::from_env().map_err(value_err)?)
    }

    /// Offline replay over a fixture tree (`corpus/`, `stub/`,
    /// `cassettes/<cassette>.ndjson`).
    #[staticmethod]
    #[pyo3(signature = (root, cassette, sandbox_dir = None))]
    fn from_fixtures(root: PathBuf, cassette: &str, sandbox_dir: Option<PathBuf>) -> PyResult<Self> {
        let mut config = ServiceConfig::fixtures(&root, cassette);
        if let Some(dir) = sandbox_dir {
            config.sandbox_dir = dir;
        }
        Self::build(config)
    }

    /// Creates a session and returns its id.
    #[pyo3(signature = (session_id = None, overrides = None))]
    fn create_session(&self, session_id: Option<&str>, overrides: Option<&str>) -> PyResult<String> {
        let value: Value = match overrides {
            Some(text) => serde_json::from_str(text).map_err(value_err)?,
            None => Value::Null,
        };
        let overrides = SessionOverrides::from_json(&value).map_err(value_err)?;
        let meta = match session_id {
            Some(id) => self.inner.create_session_with_id(id, &overrides),
            None => self.inner.create_session(&overrides),
        }
        .map_err(value_err)?;
        Ok(meta.session_id)
    }

    /// Runs one turn and returns the recorded turn as a dict. A turn that
    /// failed part-way is still returned; its `error` entry says why.
    #[pyo3(signature = (session_id, message, attachments = None))]
    fn send<'py>(
        &self,
        py: Python<'py>,
        session_id: &str,
        message: &str,
        attachments: Option<Vec<(String, String)>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let attachments: Vec<Attachment> = attachments
            .unwrap_or_default()
            .into_iter()
            .map(|(name, content)| Attachment { name, content })
            .collect();
        let orch = self.inner.clone();
        let result = py.detach(|| orch.handle_turn(session_id, message, &attachments, &mut |_| {}));
        match result {
            Ok(turn) => to_py(py, &turn),
            Err(OrchestratorError::TurnFailed(turn)) => to_py(py, &*turn),
            Err(e) => Err(value_err(e)),
        }
    }

    fn transcript<'py>(&self, py: Python<'py>, session_id: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.transcript(session_id).map_err(value_err)?)
    }

    fn transcript_digest(&self, session_id: &str) -> PyResult<String> {
        Ok(self.inner.transcript(session_id).map_err(value_err)?.digest().to_hex())
    }

    fn session_ids(&self) -> Vec<String> {
        self.inner.session_ids()
    }
}

#[pymodule]
fn genonet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenarioSpec>()?;
    m.add_class::<PyScript>()?;
    m.add_class::<PyKnowledgeIndex>()?;
    m.add_class::<PyWorkbench>()?;
    m.add_function(wrap_pyfunction!(scaffold, m)?)?;
    m.add_function(wrap_pyfunction!(interpret_flowmon, m)?)?;
    m.add_function(wrap_pyfunction!(interpret_log, m)?)?;
    Ok(())
}
