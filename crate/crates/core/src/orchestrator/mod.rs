//! The per-turn chain engine: routes each message, runs the route's chain of
//! retrieval, model, codegen, sandbox and interpretation steps, and appends
//! the turn to the session transcript.

pub mod route;
pub mod store;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use route::{route, route_request, DecidedBy, Route, RouteDecision, RouteTable, RouteTableError};
pub use store::{SessionMeta, SessionTranscript, StoreError, TranscriptStore};

use crate::clock::Clock;
use crate::codegen::{
    generate_script, lint_structure, CodegenError, Dialect, GeneratedArtifact, GenerationMode, RefinementRejected,
    StructureReport,
};
use crate::digest::Digest;
use crate::intent::{extract_intent, merge_and_default, ExtractedSpec, IntentError, KeywordTable};
use crate::interpret::{
    parse_event_log, parse_flowmonitor, summarize, InterpretError, InterpretInput, InterpretationReport, SummaryStyle,
};
use crate::llm::{GatewayError, LlmGateway, LlmRequest, ProviderMode};
use crate::retrieval::{augment_prompt, word_count, ContextChunk, SharedIndex};
use crate::sandbox::{
    debug_loop, Backend, ExecTarget, ExecutionReport, Sandbox, SandboxError, StopReason, DEFAULT_MAX_ATTEMPTS,
};

/// Turns of history rendered into model prompts.
pub const DEFAULT_CONTEXT_TURNS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Routed,
    Retrieving,
    Generating,
    Executing,
    Interpreting,
    Reply,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Routed => "routed",
            Stage::Retrieving => "retrieving",
            Stage::Generating => "generating",
            Stage::Executing => "executing",
            Stage::Interpreting => "interpreting",
            Stage::Reply => "reply",
        }
    }
}

/// Progress notification emitted while a turn runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub turn: u32,
    pub stage: Stage,
    pub detail: String,
}

/// A file supplied with a message, e.g. a FlowMonitor XML or a program log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentKind {
    Flowmon,
    Log,
}

impl AttachmentKind {
    pub fn detect(content: &str) -> Self {
        if content.contains("<FlowMonitor") {
            AttachmentKind::Flowmon
        } else {
            AttachmentKind::Log
        }
    }
}

/// An attachment as recorded in the transcript; the bytes live in the blob store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentRef {
    pub name: String,
    pub kind: AttachmentKind,
    pub digest: Digest,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub rank: u32,
    pub chunk_id: String,
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugRecord {
    pub resolved: bool,
    pub stop: StopReason,
    pub repair_prompts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnError {
    pub code: String,
    pub message: String,
}

impl TurnError {
    fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }
}

macro_rules! coded_error {
    ($($ty:ty),*) => {$(
        impl From<$ty> for TurnError {
            fn from(e: $ty) -> Self {
                TurnError::new(e.code(), e.to_string())
            }
        }
    )*};
}
coded_error!(GatewayError, IntentError, CodegenError, SandboxError, InterpretError);

impl From<StoreError> for TurnError {
    fn from(e: StoreError) -> Self {
        TurnError::new("StoreError", e.to_string())
    }
}

/// One user message and everything the chain produced for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// Dense, starting at 1.
    pub ordinal: u32,
    pub user_message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<AttachmentRef>,
    /// Absent only when routing itself failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<RouteDecision>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieved: Vec<RetrievedChunk>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted: Option<ExtractedSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<GeneratedArtifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refinements_rejected: Vec<RefinementRejected>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution_target: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub executions: Vec<ExecutionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debug: Option<DebugRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpretation: Option<InterpretationReport>,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<TurnError>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

impl Turn {
    fn new(ordinal: u32, user_message: &str, started_at_ms: u64) -> Self {
        Self {
            ordinal,
            user_message: user_message.to_string(),
            attachments: Vec::new(),
            route: None,
            retrieved: Vec::new(),
            extracted: None,
            artifacts: Vec::new(),
            structure: None,
            refinements_rejected: Vec::new(),
            execution_target: None,
            executions: Vec::new(),
            debug: None,
            interpretation: None,
            reply: String::new(),
            error: None,
            started_at_ms,
            finished_at_ms: started_at_ms,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("session {0:?} not found")]
    SessionNotFound(String),
    #[error("session {0:?} already exists")]
    SessionExists(String),
    #[error("invalid override: {0}")]
    InvalidOverride(String),
    #[error("message is empty")]
    EmptyMessage,
    #[error("attachment {name:?} is {size} bytes; the limit is {limit}")]
    PayloadTooLarge { name: String, size: usize, limit: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("turn {} failed: {}", .0.ordinal, .0.error.as_ref().map_or("", |e| e.message.as_str()))]
    TurnFailed(Box<Turn>),
}

impl OrchestratorError {
    pub fn code(&self) -> &'static str {
        match self {
            OrchestratorError::SessionNotFound(_) => "SessionNotFound",
            OrchestratorError::SessionExists(_) => "SessionExists",
            OrchestratorError::InvalidOverride(_) => "InvalidOverride",
            OrchestratorError::EmptyMessage => "EmptyMessage",
            OrchestratorError::PayloadTooLarge { .. } => "PayloadTooLarge",
            OrchestratorError::Store(_) => "StoreError",
            OrchestratorError::TurnFailed(_) => "TurnFailed",
        }
    }
}

/// Session flags a caller may set at creation; everything else is fixed by
/// the service configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionOverrides {
    pub provider_mode: Option<ProviderMode>,
    pub backend: Option<Backend>,
}

impl SessionOverrides {
    pub const ALLOWED: &'static [&'static str] = &["provider_mode", "backend"];

    /// Reads overrides from a JSON object, rejecting unknown keys and values.
    pub fn from_json(value: &Value) -> Result<Self, OrchestratorError> {
        let invalid = |m: String| OrchestratorError::InvalidOverride(m);
        let obj = match value {
            Value::Null => return Ok(Self::default()),
            Value::Object(o) => o,
            _ => return Err(invalid("overrides must be a JSON object".into())),
        };
        let mut out = Self::default();
        for (k, v) in obj {
            let s = v
                .as_str()
                .ok_or_else(|| invalid(format!("{k} must be a string")))?;
            match k.as_str() {
                "provider_mode" => out.provider_mode = Some(s.parse().map_err(invalid)?),
                "backend" => out.backend = Some(s.parse().map_err(|_| invalid(format!("unknown backend {s:?}")))?),
                other => {
                    return Err(invalid(format!(
                        "{other:?} is not overridable (allowed: {})",
                        Self::ALLOWED.join(", ")
                    )))
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub context_turns: usize,
    /// Word budget for rendered history and retrieved context.
    pub context_budget_words: usize,
    pub retrieval_k: usize,
    pub generation_mode: GenerationMode,
    pub summary_style: SummaryStyle,
    pub max_attempts: u32,
    pub max_attachment_bytes: usize,
    pub default_provider_mode: ProviderMode,
    pub default_backend: Backend,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            context_turns: DEFAULT_CONTEXT_TURNS,
            context_budget_words: 1500,
            retrieval_k: 4,
            generation_mode: GenerationMode::ScaffoldOnly,
            summary_style: SummaryStyle::Template,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            max_attachment_bytes: 8 * 1024 * 1024,
            default_provider_mode: ProviderMode::Replay,
            default_backend: Backend::Stub,
        }
    }
}

/// Renders the last `k` turns (user message and reply only), oldest first,
/// dropping the oldest until the text fits in `budget_words`.
pub fn render_context(transcript: &SessionTranscript, k: usize, budget_words: usize) -> String {
    let start = transcript.turns.len().saturating_sub(k);
    let mut blocks: Vec<String> = transcript.turns[start..]
        .iter()
        .map(|t| format!("User: {}\nAssistant: {}", t.user_message, t.reply))
        .collect();
    while !blocks.is_empty() && blocks.iter().map(|b| word_count(b)).sum::<usize>() > budget_words {
        blocks.remove(0);
    }
    blocks.join("\n\n")
}

const ANSWER_SYSTEM_PROMPT: &str = "\
You are an assistant for ns-3 network simulation and 5G/6G research. Answer
concisely. When reference context is given, prefer it and cite sources by
their bracketed rank.";

/// The request used to answer a general question.
pub fn answer_request(message: &str, history: &str, context: &[ContextChunk], budget_words: usize) -> LlmRequest {
    let question = augment_prompt(message, context, budget_words);
    let user = if history.is_empty() {
        question
    } else {
        format!("Conversation so far:\n{history}\n\nQuestion:\n{question}")
    };
    LlmRequest::new(ANSWER_SYSTEM_PROMPT, user).with_max_tokens(800)
}

/// Upstream example named in `message`, longest name first. Only names with
/// a `.` or `-` are recognized, so plain words such as "second" never match.
pub fn named_example(message: &str) -> Option<String> {
    let lower = message.to_lowercase();
    let mut names: Vec<&str> = crate::sandbox::ns3::KNOWN_EXAMPLES
        .iter()
        .map(|(k, _)| *k)
        .filter(|k| k.contains(['.', '-']))
        .collect();
    names.sort_by_key(|n| std::cmp::Reverse(n.len()));
    names.into_iter().find(|n| {
        lower.match_indices(n).any(|(i, _)| {
            let before = lower[..i].chars().next_back();
            let after = lower[i + n.len()..].chars().next();
            let boundary = |c: Option<char>| c.is_none_or(|c| !(c.is_alphanumeric() || c == '-' || c == '_'));
            boundary(before) && boundary(after.filter(|c| *c != '.'))
        })
    }).map(str::to_string)
}

struct SessionSlot {
    meta: SessionMeta,
    transcript: Mutex<SessionTranscript>,
}

pub struct Orchestrator {
    config: OrchestratorConfig,
    store: TranscriptStore,
    index: SharedIndex,
    keywords: KeywordTable,
    routes: RouteTable,
    clock: Arc<dyn Clock>,
    gateways: HashMap<ProviderMode, Arc<LlmGateway>>,
    sandboxes: HashMap<Backend, Arc<Sandbox>>,
    unavailable: HashMap<Backend, String>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("config", &self.config)
            .field("providers", &self.gateways.keys().collect::<Vec<_>>())
            .field("backends", &self.sandboxes.keys().collect::<Vec<_>>())
            .finish()
    }
}

fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    getrandom::fill(&mut bytes).expect("operating system randomness is available");
    hex::encode(bytes)
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Orchestrator {
    /// Loads any sessions already persisted in `store`.
    pub fn new(
        config: OrchestratorConfig,
        store: TranscriptStore,
        index: SharedIndex,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StoreError> {
        let sessions = store
            .load_all()?
            .into_values()
            .map(|(meta, transcript)| {
                let id = meta.session_id.clone();
                let slot = SessionSlot {
                    meta,
                    transcript: Mutex::new(transcript),
                };
                (id, Arc::new(slot))
            })
            .collect();
        Ok(Self {
            config,
            store,
            index,
            keywords: KeywordTable::default(),
            routes: RouteTable::default(),
            clock,
            gateways: HashMap::new(),
            sandboxes: HashMap::new(),
            unavailable: HashMap::new(),
            sessions: RwLock::new(sessions),
        })
    }

    pub fn with_gateway(mut self, gateway: Arc<LlmGateway>) -> Self {
        self.gateways.insert(gateway.mode(), gateway);
        self
    }

    pub fn with_sandbox(mut self, sandbox: Arc<Sandbox>) -> Self {
        self.unavailable.remove(&sandbox.backend());
        self.sandboxes.insert(sandbox.backend(), sandbox);
        self
    }

    /// Records why `backend` cannot be used; Execute turns on it fail with this reason.
    pub fn with_unavailable_backend(mut self, backend: Backend, reason: impl Into<String>) -> Self {
        self.sandboxes.remove(&backend);
        self.unavailable.insert(backend, reason.into());
        self
    }

    pub fn with_route_table(mut self, routes: RouteTable) -> Self {
        self.routes = routes;
        self
    }

    pub fn with_keywords(mut self, keywords: KeywordTable) -> Self {
        self.keywords = keywords;
        self
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn store(&self) -> &TranscriptStore {
        &self.store
    }

    pub fn index(&self) -> &SharedIndex {
        &self.index
    }

    pub fn providers(&self) -> Vec<ProviderMode> {
        let mut v: Vec<_> = self.gateways.keys().copied().collect();
        v.sort_by_key(|m| m.as_str());
        v
    }

    pub fn backends(&self) -> Vec<(Backend, Option<String>)> {
        let mut v: Vec<_> = self
            .sandboxes
            .keys()
            .map(|b| (*b, None))
            .chain(self.unavailable.iter().map(|(b, r)| (*b, Some(r.clone()))))
            .collect();
        v.sort_by_key(|(b, _)| b.to_string());
        v
    }

    pub fn create_session(&self, overrides: &SessionOverrides) -> Result<SessionMeta, OrchestratorError> {
        self.create_session_with_id(&new_session_id(), overrides)
    }

    /// Like [`create_session`](Self::create_session) with a caller-chosen id
    /// (letters, digits, `-` and `_`).
    pub fn create_session_with_id(
        &self,
        session_id: &str,
        overrides: &SessionOverrides,
    ) -> Result<SessionMeta, OrchestratorError> {
        if !valid_session_id(session_id) {
            return Err(OrchestratorError::InvalidOverride(format!(
                "session id {session_id:?} is not URL-safe"
            )));
        }
        let provider_mode = overrides.provider_mode.unwrap_or(self.config.default_provider_mode);
        if !self.gateways.contains_key(&provider_mode) {
            return Err(OrchestratorError::InvalidOverride(format!(
                "provider mode {provider_mode} is not configured"
            )));
        }
        let meta = SessionMeta {
            session_id: session_id.to_string(),
            created_at_ms: self.clock.now_ms(),
            provider_mode,
            backend: overrides.backend.unwrap_or(self.config.default_backend),
        };
        let mut sessions = self.sessions.write().unwrap();
        if sessions.contains_key(session_id) {
            return Err(OrchestratorError::SessionExists(session_id.to_string()));
        }
        self.store.create_session(&meta)?;
        sessions.insert(
            session_id.to_string(),
            Arc::new(SessionSlot {
                meta: meta.clone(),
                transcript: Mutex::new(SessionTranscript::new(session_id)),
            }),
        );
        Ok(meta)
    }

    fn slot(&self, session_id: &str) -> Result<Arc<SessionSlot>, OrchestratorError> {
        self.sessions
            .read()
            .unwrap()
            .get(session_id)
            .cloned()
            .ok_or_else(|| OrchestratorError::SessionNotFound(session_id.to_string()))
    }

    pub fn session(&self, session_id: &str) -> Result<SessionMeta, OrchestratorError> {
        Ok(self.slot(session_id)?.meta.clone())
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.sessions.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Snapshot of the transcript; waits for an in-flight turn to finish.
    pub fn transcript(&self, session_id: &str) -> Result<SessionTranscript, OrchestratorError> {
        let slot = self.slot(session_id)?;
        let t = slot.transcript.lock().unwrap_or_else(|e| e.into_inner());
        Ok(t.clone())
    }

    /// Runs one turn. The turn is appended to the transcript whether or not
    /// its chain succeeds; a failed chain is reported as
    /// [`OrchestratorError::TurnFailed`] carrying the recorded turn.
    pub fn handle_turn(
        &self,
        session_id: &str,
        message: &str,
        attachments: &[Attachment],
        sink: &mut dyn FnMut(&StageEvent),
    ) -> Result<Turn, OrchestratorError> {
        let slot = self.slot(session_id)?;
        if message.trim().is_empty() && attachments.is_empty() {
            return Err(OrchestratorError::EmptyMessage);
        }
        for a in attachments {
            if a.content.len() > self.config.max_attachment_bytes {
                return Err(OrchestratorError::PayloadTooLarge {
                    name: a.name.clone(),
                    size: a.content.len(),
                    limit: self.config.max_attachment_bytes,
                });
            }
        }
        let mut transcript = slot.transcript.lock().unwrap_or_else(|e| e.into_inner());
        let mut turn = Turn::new(transcript.next_ordinal(), message, self.clock.now_ms());
        let mut run = TurnRun {
            orch: self,
            meta: &slot.meta,
            transcript: &transcript,
            ordinal: turn.ordinal,
            sink,
        };
        if let Err(e) = run.chain(&mut turn, message, attachments) {
            turn.reply = format!("Error ({}): {}", e.code, e.message);
            turn.error = Some(e);
        }
        run.emit(Stage::Reply, if turn.error.is_some() { "failed" } else { "ok" });
        turn.finished_at_ms = self.clock.now_ms();
        self.store.append_turn(session_id, &turn)?;
        transcript.turns.push(turn.clone());
        if turn.error.is_some() {
            Err(OrchestratorError::TurnFailed(Box::new(turn)))
        } else {
            Ok(turn)
        }
    }
}

/// State for one turn in flight.
struct TurnRun<'a> {
    orch: &'a Orchestrator,
    meta: &'a SessionMeta,
    transcript: &'a SessionTranscript,
    ordinal: u32,
    sink: &'a mut dyn FnMut(&StageEvent),
}

impl TurnRun<'_> {
    fn emit(&mut self, stage: Stage, detail: impl Into<String>) {
        (self.sink)(&StageEvent {
            turn: self.ordinal,
            stage,
            detail: detail.into(),
        });
    }

    fn gateway(&self) -> Result<&Arc<LlmGateway>, TurnError> {
        self.orch.gateways.get(&self.meta.provider_mode).ok_or_else(|| {
            TurnError::new(
                "Misconfigured",
                format!("provider mode {} is not configured", self.meta.provider_mode),
            )
        })
    }

    fn sandbox(&self) -> Result<&Arc<Sandbox>, TurnError> {
        let backend = self.meta.backend;
        self.orch.sandboxes.get(&backend).ok_or_else(|| {
            let reason = self
                .orch
                .unavailable
                .get(&backend)
                .cloned()
                .unwrap_or_else(|| format!("the {backend} backend is not configured"));
            SandboxError::BackendUnavailable(reason).into()
        })
    }

    fn history(&self) -> String {
        let c = &self.orch.config;
        render_context(self.transcript, c.context_turns, c.context_budget_words)
    }

    fn chain(&mut self, turn: &mut Turn, message: &str, attachments: &[Attachment]) -> Result<(), TurnError> {
        for a in attachments {
            let digest = self.orch.store.put_blob(a.content.as_bytes())?;
            turn.attachments.push(AttachmentRef {
                name: a.name.clone(),
                kind: AttachmentKind::detect(&a.content),
                digest,
                size: a.content.len() as u64,
            });
        }
        let gateway = self.gateway()?.clone();
        let decision = route(message, !attachments.is_empty(), &self.orch.routes, &gateway, &self.history())?;
        self.emit(Stage::Routed, format!("{} ({})", decision.route, decision.rationale));
        let r = decision.route;
        turn.route = Some(decision);
        match r {
            Route::GeneralQuery => self.general_query(turn, message, &gateway),
            Route::GenerateCpp => self.generate(turn, message, Dialect::Cpp, &gateway),
            Route::GeneratePython => self.generate(turn, message, Dialect::Python, &gateway),
            Route::Execute => self.execute(turn, message, &gateway, false),
            Route::Debug => self.execute(turn, message, &gateway, true),
            Route::Interpret => self.interpret(turn, attachments, &gateway),
        }
    }

    fn retrieve(&mut self, turn: &mut Turn, message: &str) -> Vec<ContextChunk> {
        let index = self.orch.index.read().unwrap_or_else(|e| e.into_inner());
        let chunks = index
            .query(message, self.orch.config.retrieval_k.max(1))
            .map(|hits| index.resolve(&hits))
            .unwrap_or_default();
        drop(index);
        turn.retrieved = chunks
            .iter()
            .map(|c| RetrievedChunk {
                rank: c.rank,
                chunk_id: c.chunk_id.clone(),
                doc_id: c.doc_id.clone(),
                score: c.score,
            })
            .collect();
        self.emit(Stage::Retrieving, format!("{} chunks", chunks.len()));
        chunks
    }

    fn general_query(&mut self, turn: &mut Turn, message: &str, gateway: &LlmGateway) -> Result<(), TurnError> {
        let chunks = self.retrieve(turn, message);
        let req = answer_request(message, &self.history(), &chunks, self.orch.config.context_budget_words);
        turn.reply = gateway.complete(&req)?.text;
        Ok(())
    }

    fn generate(&mut self, turn: &mut Turn, message: &str, dialect: Dialect, gateway: &LlmGateway) -> Result<(), TurnError> {
        let chunks = self.retrieve(turn, message);
        self.emit(Stage::Generating, format!("extracting scenario for a {dialect} script"));
        let partial = extract_intent(gateway, message, &chunks, &self.orch.keywords)?;
        let extracted = merge_and_default(&partial)?;
        let generation = generate_script(
            &extracted.spec,
            dialect,
            self.orch.config.generation_mode,
            gateway,
            self.orch.clock.as_ref(),
        )?;
        let report = lint_structure(&generation.artifact);
        self.emit(
            Stage::Generating,
            format!("{} ({} of {} structure checks passed)", generation.artifact.file_name(), report.checks.len() - report.failed().len(), report.checks.len()),
        );
        turn.reply = generation_reply(&extracted, &generation.artifact, &report);
        turn.extracted = Some(extracted);
        turn.artifacts.push(generation.artifact);
        turn.structure = Some(report);
        turn.refinements_rejected = generation.rejected;
        Ok(())
    }

    /// Most recent generated artifact in the session.
    fn latest_artifact(&self) -> Option<&GeneratedArtifact> {
        self.transcript.turns.iter().rev().find_map(|t| t.artifacts.last())
    }

    fn execute(&mut self, turn: &mut Turn, message: &str, gateway: &LlmGateway, debug: bool) -> Result<(), TurnError> {
        let target = match named_example(message).filter(|_| !debug) {
            Some(example) => ExecTarget::Example(example),
            None => match self.latest_artifact() {
                Some(a) => ExecTarget::artifact(a.clone()),
                None => {
                    return Err(TurnError::new(
                        "NothingToExecute",
                        if debug {
                            "nothing to debug: no generated script in this session"
                        } else {
                            "nothing to execute: no generated script in this session and no example named"
                        },
                    ))
                }
            },
        };
        let sandbox = self.sandbox()?.clone();
        turn.execution_target = Some(target.label());
        self.emit(Stage::Executing, format!("{} on the {} backend", target.label(), sandbox.backend()));
        let original = target.clone();
        let mut outcome = debug_loop(&sandbox, gateway, target, self.orch.config.max_attempts);
        // Produced files move into the blob store; the working directories
        // are ephemeral and removed once captured.
        for report in &mut outcome.attempts {
            for a in &mut report.artifacts {
                if let Ok(bytes) = std::fs::read(&a.path) {
                    self.orch.store.put_blob(&bytes)?;
                }
                a.path = PathBuf::new();
            }
            if !report.workdir.as_os_str().is_empty() {
                if let Err(e) = std::fs::remove_dir_all(&report.workdir) {
                    tracing::warn!(dir = %report.workdir.display(), "could not remove sandbox directory: {e}");
                }
                report.workdir = PathBuf::new();
            }
        }
        if outcome.final_target != original {
            if let ExecTarget::Artifact(a) = &outcome.final_target {
                turn.structure = Some(lint_structure(a));
                turn.artifacts.push((**a).clone());
            }
        }
        turn.executions = outcome.attempts.clone();
        turn.debug = Some(DebugRecord {
            resolved: outcome.resolved,
            stop: outcome.stop.clone(),
            repair_prompts: outcome.repair_prompts.clone(),
        });
        let mut reply = execution_reply(&outcome.final_target, sandbox.backend(), &outcome.attempts, &outcome.stop);
        if !outcome.resolved {
            let e = match &outcome.stop {
                StopReason::Error { code, message } => TurnError::new(code.clone(), message.clone()),
                StopReason::Timeout => TurnError::new("Timeout", "execution timed out"),
                StopReason::LintRegression { checks } => TurnError::new(
                    "LintRegression",
                    format!("the repaired script failed checks it passed before: {}", checks.join(", ")),
                ),
                _ => {
                    let stderr = outcome.attempts.last().map(|r| r.stderr.trim()).unwrap_or_default();
                    TurnError::new(
                        "ExecutionFailed",
                        format!("still failing after {} attempts:\n{stderr}", outcome.attempts.len()),
                    )
                }
            };
            return Err(e);
        }
        if let Some(last) = outcome.attempts.last() {
            if let Some(input) = self.execution_input(last)? {
                let report = self.summarize(&input, gateway);
                reply.push_str("\n\n");
                reply.push_str(&report.text);
                turn.interpretation = Some(report);
            }
        }
        turn.reply = reply;
        Ok(())
    }

    /// Interpretable output of a finished run: its FlowMonitor file, else
    /// application log lines on stdout.
    fn execution_input(&self, report: &ExecutionReport) -> Result<Option<InterpretInput>, TurnError> {
        if let Some(a) = report.artifact("flowmon") {
            let bytes = self.orch.store.get_blob(&a.digest)?;
            let xml = String::from_utf8_lossy(&bytes);
            return Ok(Some(InterpretInput::Flows(parse_flowmonitor(&xml)?)));
        }
        let log = parse_event_log(&report.stdout);
        Ok((!log.events.is_empty()).then_some(InterpretInput::Timeline(log.events)))
    }

    fn summarize(&mut self, input: &InterpretInput, gateway: &LlmGateway) -> InterpretationReport {
        let detail = match input {
            InterpretInput::Flows(f) => format!("{} flows", f.len()),
            InterpretInput::Timeline(e) => format!("{} events", e.len()),
        };
        self.emit(Stage::Interpreting, detail);
        summarize(input, self.orch.config.summary_style, Some(gateway))
    }

    fn interpret(&mut self, turn: &mut Turn, attachments: &[Attachment], gateway: &LlmGateway) -> Result<(), TurnError> {
        let input = match attachments.last() {
            Some(a) => match AttachmentKind::detect(&a.content) {
                AttachmentKind::Flowmon => InterpretInput::Flows(parse_flowmonitor(&a.content)?),
                AttachmentKind::Log => {
                    let log = parse_event_log(&a.content);
                    if log.events.is_empty() {
                        return Err(TurnError::new(
                            "NothingToInterpret",
                            format!("{} holds no recognizable events ({} lines skipped)", a.name, log.skipped),
                        ));
                    }
                    InterpretInput::Timeline(log.events)
                }
            },
            None => {
                let mut found = None;
                'turns: for t in self.transcript.turns.iter().rev() {
                    for r in t.executions.iter().rev().filter(|r| r.succeeded()) {
                        if let Some(input) = self.execution_input(r)? {
                            found = Some(input);
                            break 'turns;
                        }
                    }
                }
                found.ok_or_else(|| {
                    TurnError::new(
                        "NothingToInterpret",
                        "nothing to interpret: attach a FlowMonitor XML or log, or run a script first",
                    )
                })?
            }
        };
        let report = self.summarize(&input, gateway);
        turn.reply = report.text.clone();
        turn.interpretation = Some(report);
        Ok(())
    }
}

fn generation_reply(extracted: &ExtractedSpec, artifact: &GeneratedArtifact, report: &StructureReport) -> String {
    let failed = report.failed();
    let checks = if failed.is_empty() {
        format!("All {} structure checks passed.", report.checks.len())
    } else {
        format!("Structure checks failed: {}.", failed.join(", "))
    };
    let defaulted: Vec<&str> = extracted
        .provenance
        .iter()
        .filter(|(_, p)| **p == crate::intent::Provenance::Default)
        .map(|(k, _)| k.as_str())
        .collect();
    let mut out = format!(
        "Generated `{}` ({}) for this scenario:\n\n```json\n{}\n```\n",
        artifact.file_name(),
        artifact.dialect,
        crate::digest::canonical_json_pretty(&extracted.spec),
    );
    if !defaulted.is_empty() {
        out.push_str(&format!("\nDefaults were used for: {}.\n", defaulted.join(", ")));
    }
    out.push_str(&format!("\n```{}\n{}```\n\n{checks}", artifact.dialect, artifact.source));
    out
}

fn execution_reply(target: &ExecTarget, backend: Backend, attempts: &[ExecutionReport], stop: &StopReason) -> String {
    let status = match stop {
        StopReason::Succeeded => "succeeded".to_string(),
        StopReason::Exhausted => "failed on every attempt".to_string(),
        StopReason::Timeout => "timed out".to_string(),
        StopReason::LintRegression { .. } => "stopped: the repair broke the script structure".to_string(),
        StopReason::Error { message, .. } => format!("stopped: {message}"),
    };
    let mut out = format!(
        "Executed `{}` on the {backend} backend in {} attempt(s): {status}.",
        target.label(),
        attempts.len()
    );
    for r in attempts {
        let exit = r.exit_status.map_or("none".to_string(), |c| c.to_string());
        out.push_str(&format!(
            "\n- attempt {}: {} phase, exit {exit}, {} s",
            r.attempt,
            format!("{:?}", r.phase).to_lowercase(),
            crate::units::plain_decimal(r.wall_time_s)
        ));
    }
    out
}
