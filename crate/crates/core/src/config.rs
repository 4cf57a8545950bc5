//! Service configuration: which model provider, executor backend, corpus and
//! transcript directory an orchestrator is built with.
//!
//! | variable | meaning |
//! |---|---|
//! | `GENONET_PROVIDER_MODE` | `replay` (default), `record` or `live` |
//! | `GENONET_CASSETTE` | cassette file for replay and record modes |
//! | `GENONET_BACKEND` | default executor backend, `stub` (default) or `ns3` |
//! | `GENONET_STUB_DIR` | stub fixture bundles, one directory per key |
//! | `GENONET_CORPUS_DIR` | `*.txt` documents indexed at start-up |
//! | `GENONET_INDEX` | a saved index file, loaded before the corpus |
//! | `GENONET_DATA_DIR` | transcript store; memory only when unset |
//! | `GENONET_TIMEOUT_S` | per-phase sandbox timeout |
//! | `GENONET_LOGICAL_CLOCK` | `1` for deterministic timestamps |
//!
//! `NS3_ROOT`, `GENONET_SANDBOX_DIR`, `GENONET_MAX_SANDBOXES` and the
//! `LLM_*` variables are read by the sandbox and transport layers.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crate::clock::{Clock, LogicalClock, SystemClock};
use crate::codegen::GenerationMode;
use crate::interpret::SummaryStyle;
use crate::llm::{Cassette, CassetteError, GatewayOptions, HttpConfig, HttpTransport, LlmGateway, ProviderMode, Transport};
use crate::orchestrator::{Orchestrator, OrchestratorConfig, StoreError, TranscriptStore};
use crate::retrieval::{KnowledgeIndex, RetrievalError};
use crate::sandbox::{default_work_root, Backend, Limits, Ns3Executor, Sandbox, SandboxPermits, StubExecutor};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{var}: {message}")]
    Invalid { var: &'static str, message: String },
    #[error(transparent)]
    Cassette(#[from] CassetteError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub provider_mode: ProviderMode,
    pub cassette: Option<PathBuf>,
    pub backend: Backend,
    pub stub_dir: Option<PathBuf>,
    pub corpus_dir: Option<PathBuf>,
    pub index_path: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub sandbox_dir: PathBuf,
    pub max_sandboxes: Option<usize>,
    pub timeout: Option<Duration>,
    /// Start of the logical clock; the system clock is used when `None`.
    pub logical_clock: Option<u64>,
    pub orchestrator: OrchestratorConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            provider_mode: ProviderMode::Replay,
            cassette: None,
            backend: Backend::Stub,
            stub_dir: None,
            corpus_dir: None,
            index_path: None,
            data_dir: None,
            sandbox_dir: default_work_root(),
            max_sandboxes: None,
            timeout: None,
            logical_clock: None,
            orchestrator: OrchestratorConfig::default(),
        }
    }
}

fn var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

fn parsed<T: std::str::FromStr>(name: &'static str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    var(name)
        .map(|v| {
            v.trim().parse().map_err(|e: T::Err| ConfigError::Invalid {
                var: name,
                message: e.to_string(),
            })
        })
        .transpose()
}

impl ServiceConfig {
    /// Defaults overridden by the environment.
    pub fn from_env() -> Result<Self, ConfigError> {
        let mut c = Self::default();
        if let Some(m) = parsed("GENONET_PROVIDER_MODE")? {
            c.provider_mode = m;
        }
        if let Some(b) = parsed("GENONET_BACKEND")? {
            c.backend = b;
        }
        c.cassette = var("GENONET_CASSETTE").map(PathBuf::from);
        c.stub_dir = var("GENONET_STUB_DIR").map(PathBuf::from);
        c.corpus_dir = var("GENONET_CORPUS_DIR").map(PathBuf::from);
        c.index_path = var("GENONET_INDEX").map(PathBuf::from);
        c.data_dir = var("GENONET_DATA_DIR").map(PathBuf::from);
        c.max_sandboxes = parsed("GENONET_MAX_SANDBOXES")?;
        c.timeout = parsed::<f64>("GENONET_TIMEOUT_S")?
            .map(|s| {
                Duration::try_from_secs_f64(s).map_err(|e| ConfigError::Invalid {
                    var: "GENONET_TIMEOUT_S",
                    message: e.to_string(),
                })
            })
            .transpose()?;
        if var("GENONET_LOGICAL_CLOCK").is_some_and(|v| v != "0") {
            c.logical_clock = Some(0);
        }
        Ok(c)
    }

    /// Offline configuration over a fixture tree holding `corpus/`, `stub/`
    /// and `cassettes/<cassette>.ndjson`, with a logical clock.
    pub fn fixtures(root: &Path, cassette: &str) -> Self {
        Self {
            cassette: Some(root.join("cassettes").join(format!("{cassette}.ndjson"))),
            stub_dir: Some(root.join("stub")),
            corpus_dir: Some(root.join("corpus")),
            logical_clock: Some(1_700_000_000_000),
            ..Self::default()
        }
    }

    pub fn with_generation_mode(mut self, mode: GenerationMode) -> Self {
        self.orchestrator.generation_mode = mode;
        self
    }

    pub fn with_summary_style(mut self, style: SummaryStyle) -> Self {
        self.orchestrator.summary_style = style;
        self
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        match self.logical_clock {
            Some(start) => Arc::new(LogicalClock::new(start, 1)),
            None => Arc::new(SystemClock),
        }
    }

    fn cassette(&self) -> Result<Cassette, ConfigError> {
        Ok(match &self.cassette {
            Some(p) if self.provider_mode == ProviderMode::Record => Cassette::load_or_empty(p)?,
            Some(p) => Cassette::load(p)?,
            None => Cassette::new(),
        })
    }

    /// The gateway for the configured provider mode.
    pub fn gateway(&self) -> Result<LlmGateway, ConfigError> {
        self.gateway_with(None)
    }

    /// Like [`gateway`](Self::gateway) with an explicit transport for the
    /// live and record modes.
    pub fn gateway_with(&self, transport: Option<Arc<dyn Transport>>) -> Result<LlmGateway, ConfigError> {
        let transport = || transport.clone().unwrap_or_else(|| Arc::new(HttpTransport::new(HttpConfig::from_env())));
        Ok(match self.provider_mode {
            ProviderMode::Replay => LlmGateway::replay(self.cassette()?),
            ProviderMode::Live => LlmGateway::live(transport()),
            ProviderMode::Record => LlmGateway::record(
                transport(),
                self.cassette()?,
                GatewayOptions {
                    cassette_path: self.cassette.clone(),
                    ..GatewayOptions::default()
                },
            ),
        })
    }

    pub fn index(&self) -> Result<KnowledgeIndex, ConfigError> {
        let mut index = match &self.index_path {
            Some(p) => KnowledgeIndex::load(p)?,
            None => KnowledgeIndex::default(),
        };
        if let Some(dir) = &self.corpus_dir {
            index.ingest_dir(dir)?;
        }
        Ok(index)
    }

    pub fn limits(&self) -> Limits {
        match self.timeout {
            Some(t) => Limits::default().with_timeout(t),
            None => Limits::default(),
        }
    }

    pub fn stub_executor(&self) -> StubExecutor {
        StubExecutor::new(self.stub_dir.clone())
    }

    fn permits(&self) -> Arc<SandboxPermits> {
        match self.max_sandboxes {
            Some(n) => SandboxPermits::new(n),
            None => SandboxPermits::from_env(),
        }
    }

    /// Builds the orchestrator: one gateway for the configured provider mode,
    /// the stub backend, and the ns-3 backend when `NS3_ROOT` points at a tree.
    pub fn build(&self) -> Result<Orchestrator, ConfigError> {
        self.build_with(None)
    }

    pub fn build_with(&self, transport: Option<Arc<dyn Transport>>) -> Result<Orchestrator, ConfigError> {
        let clock = self.clock();
        let store = match &self.data_dir {
            Some(d) => TranscriptStore::open(d)?,
            None => TranscriptStore::in_memory(),
        };
        let config = OrchestratorConfig {
            default_provider_mode: self.provider_mode,
            default_backend: self.backend,
            ..self.orchestrator.clone()
        };
        let permits = self.permits();
        let sandbox = |executor: Arc<dyn crate::sandbox::Executor>| {
            Arc::new(Sandbox::new(
                executor,
                self.limits(),
                self.sandbox_dir.clone(),
                permits.clone(),
                clock.clone(),
            ))
        };
        let mut orch = Orchestrator::new(config, store, self.index()?.into_shared(), clock.clone())?
            .with_gateway(Arc::new(self.gateway_with(transport)?))
            .with_sandbox(sandbox(Arc::new(self.stub_executor())));
        orch = match Ns3Executor::from_env() {
            Ok(ns3) => orch.with_sandbox(sandbox(Arc::new(ns3))),
            Err(e) => orch.with_unavailable_backend(Backend::Ns3, e.to_string()),
        };
        Ok(orch)
    }
}
