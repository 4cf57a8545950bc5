//! Single choke point for model calls.
//!
//! Every call goes through [`LlmGateway::complete`], which runs in one of three
//! modes:
//!
//! * `live`: one HTTP round trip per call (plus bounded retries on transient failures),
//! * `replay`: the response recorded for the request digest, never the network,
//! * `record`: serve from the cassette when possible, otherwise call live and append.
//!
//! Request digests are computed over a canonical form with volatile metadata
//! stripped and whitespace runs collapsed, so cosmetic prompt differences do not
//! produce cassette misses.

pub mod cassette;
pub mod contract;
pub mod transport;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use cassette::{Cassette, CassetteError, CassetteRecord, RecordedResponse};
pub use transport::{HttpConfig, HttpTransport, ScriptedTransport, Transport, TransportFailure};

use crate::clock::{Clock, SystemClock};
use crate::digest::Digest;

pub const DEFAULT_MODEL: &str = "gpt-4o";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Fields that vary between otherwise identical requests; excluded from digests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub messages: Vec<Message>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract: Option<String>,
    #[serde(default, skip_serializing_if = "is_default_metadata")]
    pub metadata: RequestMetadata,
}

fn is_default_metadata(m: &RequestMetadata) -> bool {
    *m == RequestMetadata::default()
}

impl LlmRequest {
    /// System + user request with the default model and temperature 0.
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            messages: vec![Message::system(system), Message::user(user)],
            model: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            max_tokens: 1024,
            contract: None,
            metadata: RequestMetadata::default(),
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    /// Attaches a structured-output contract; forces temperature to 0.
    pub fn with_contract(mut self, contract: &str) -> Self {
        self.contract = Some(contract.to_string());
        self.temperature = 0.0;
        self
    }

    pub fn with_session(mut self, session_id: impl Into<String>) -> Self {
        self.metadata.session_id = Some(session_id.into());
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        match self.messages.first() {
            None => return invalid("message list is empty"),
            Some(m) if m.role != Role::System => return invalid("first message must be system"),
            _ => {}
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid("temperature must lie in [0, 2]");
        }
        if self.contract.is_some() && self.temperature != 0.0 {
            return invalid("structured-output requests must use temperature 0");
        }
        if let Some(c) = &self.contract {
            if !contract::is_registered(c) {
                return Err(GatewayError::InvalidRequest(format!(
                    "unknown structured-output contract {c:?}"
                )));
            }
        }
        Ok(())
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Digest of the request's canonical form (volatile metadata stripped,
/// whitespace runs collapsed).
pub fn normalize_request(req: &LlmRequest) -> Digest {
    let messages: Vec<_> = req
        .messages
        .iter()
        .map(|m| json!({"role": m.role.as_str(), "content": collapse_whitespace(&m.content)}))
        .collect();
    Digest::of_canonical(&json!({
        "messages": messages,
        "model": req.model,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "contract": req.contract,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
    pub provenance: Provenance,
}

impl LlmResponse {
    fn from_recorded(r: &RecordedResponse, provenance: Provenance) -> Self {
        Self {
            text: r.text.clone(),
            finish_reason: r.finish_reason,
            usage: r.usage,
            provenance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Live,
    Replay,
    Record,
}

impl ProviderMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProviderMode::Live => "live",
            ProviderMode::Replay => "replay",
            ProviderMode::Record => "record",
        }
    }
}

impl fmt::Display for ProviderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProviderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(ProviderMode::Live),
            "replay" => Ok(ProviderMode::Replay),
            "record" => Ok(ProviderMode::Record),
            other => Err(format!("unknown provider mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no cassette entry for request {0}")]
    CassetteMiss(Digest),
    #[error("transport error after {retries} retries: {message}")]
    TransportError { message: String, retries: u32 },
    #[error("output violates contract {contract} after repair: {message}")]
    ContractViolation { contract: String, message: String },
    #[error("gateway misconfigured: {0}")]
    Misconfigured(String),
}

impl GatewayError {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::InvalidRequest(_) => "InvalidRequest",
            GatewayError::CassetteMiss(_) => "CassetteMiss",
            GatewayError::TransportError { .. } => "TransportError",
            GatewayError::ContractViolation { .. } => "ContractViolation",
            GatewayError::Misconfigured(_) => "Misconfigured",
        }
    }
}

/// Gateway settings shared by every mode.
#[derive(Debug, Clone)]
pub struct GatewayOptions {
    /// Retries after the first failed live attempt (retryable failures only).
    pub max_retries: u32,
    /// Cassette file that record mode appends to.
    pub cassette_path: Option<PathBuf>,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        Self {
            max_retries: 2,
            cassette_path: None,
        }
    }
}

pub struct LlmGateway {
    mode: ProviderMode,
    transport: Option<Arc<dyn Transport>>,
    cassette: RwLock<Cassette>,
    writer: Mutex<()>,
    options: GatewayOptions,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmGateway")
            .field("mode", &self.mode)
            .field("cassette_len", &self.cassette.read().map(|c| c.len()).ok())
            .finish()
    }
}

impl LlmGateway {
    pub fn replay(cassette: Cassette) -> Self {
        Self::build(ProviderMode::Replay, None, cassette, GatewayOptions::default())
    }

    pub fn live(transport: Arc<dyn Transport>) -> Self {
        Self::build(
            ProviderMode::Live,
            Some(transport),
            Cassette::new(),
            GatewayOptions::default(),
        )
    }

    pub fn record(transport: Arc<dyn Transport>, cassette: Cassette, options: GatewayOptions) -> Self {
        Self::build(ProviderMode::Record, Some(transport), cassette, options)
    }

    pub fn build(
        mode: ProviderMode,
        transport: Option<Arc<dyn Transport>>,
        cassette: Cassette,
        options: GatewayOptions,
    ) -> Self {
        Self {
            mode,
            transport,
            cassette: RwLock::new(cassette),
            writer: Mutex::new(()),
            options,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_options(mut self, options: GatewayOptions) -> Self {
        self.options = options;
        self
    }

    pub fn mode(&self) -> ProviderMode {
        self.mode
    }

    /// Snapshot of the current cassette contents.
    pub fn cassette(&self) -> Cassette {
        self.cassette.read().unwrap().clone()
    }

    /// Runs the request; with a contract set, validates the output and makes
    /// exactly one repair round trip before giving up.
    pub fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        req.validate()?;
        let first = self.dispatch(req)?;
        let Some(contract) = req.contract.as_deref() else {
            return Ok(first);
        };
        let message = match contract::validate(contract, &first.text) {
            Ok(_) => return Ok(first),
            Err(m) => m,
        };
        tracing::debug!(contract, %message, "structured output rejected, repairing");
        let repair = repair_request(req, &first.text, &message);
        let second = self.dispatch(&repair)?;
        match contract::validate(contract, &second.text) {
            Ok(_) => Ok(second),
            Err(message) => Err(GatewayError::ContractViolation {
                contract: contract.to_string(),
                message,
            }),
        }
    }

    fn dispatch(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let digest = normalize_request(req);
        match self.mode {
            ProviderMode::Replay => self
                .lookup(&digest)
                .ok_or(GatewayError::CassetteMiss(digest)),
            ProviderMode::Live => self
                .send_live(req)
                .map(|r| LlmResponse::from_recorded(&r, Provenance::Live)),
            ProviderMode::Record => {
                if let Some(hit) = self.lookup(&digest) {
                    return Ok(hit);
                }
                // One writer at a time; re-check so concurrent identical
                // requests cost a single round trip.
                let _guard = self.writer.lock().unwrap();
                if let Some(hit) = self.lookup(&digest) {
                    return Ok(hit);
                }
                let recorded = self.send_live(req)?;
                let record = CassetteRecord {
                    digest,
                    request: req.clone(),
                    response: recorded.clone(),
                    recorded_at_ms: Some(self.clock.now_ms()),
                };
                if let Some(path) = &self.options.cassette_path {
                    cassette::append_record(path, &record).map_err(|e| {
                        GatewayError::Misconfigured(format!(
                            "cannot append to cassette {}: {e}",
                            path.display()
                        ))
                    })?;
                }
                self.cassette.write().unwrap().push(record);
                Ok(LlmResponse::from_recorded(&recorded, Provenance::Live))
            }
        }
    }

    fn lookup(&self, digest: &Digest) -> Option<LlmResponse> {
        let cassette = self.cassette.read().unwrap();
        cassette
            .get(digest)
            .map(|r| LlmResponse::from_recorded(&r.response, Provenance::Replay))
    }

    fn send_live(&self, req: &LlmRequest) -> Result<RecordedResponse, GatewayError> {
        let transport = self.transport.as_ref().ok_or_else(|| {
            GatewayError::Misconfigured(format!("{} mode requires a transport", self.mode))
        })?;
        let mut retries = 0;
        loop {
            match transport.send(req) {
                Ok(r) => return Ok(r),
                Err(f) if f.retryable && retries < self.options.max_retries => {
                    retries += 1;
                    tracing::warn!(retries, error = %f.message, "retrying model call");
                }
                Err(f) => {
                    return Err(GatewayError::TransportError {
                        message: f.message,
                        retries,
                    })
                }
            }
        }
    }
}

/// The original conversation, the rejected output, and the validator's message.
pub fn repair_request(req: &LlmRequest, rejected: &str, validator_message: &str) -> LlmRequest {
    let mut repair = req.clone();
    repair.messages.push(Message::assistant(rejected));
    repair.messages.push(Message::user(format!(
        "The previous output was rejected: {validator_message}\nReturn only a corrected JSON object."
    )));
    repair
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> LlmRequest {
        LlmRequest::new("You are a network simulation assistant.", user)
    }

    #[test]
    fn digest_is_deterministic() {
        assert_eq!(normalize_request(&req("hi")), normalize_request(&req("hi")));
    }

    #[test]
    fn digest_ignores_whitespace_and_metadata() {
        // Collapsing by hand: "run  it \n" -> "run it"
        let a = req("run  it \n").with_session("abc");
        let b = req("run it");
        assert_eq!(normalize_request(&a), normalize_request(&b));
    }

    #[test]
    fn digest_tracks_system_prompt() {
        let a = req("hi");
        let mut b = req("hi");
        b.messages[0].content = "Different system prompt".into();
        assert_ne!(normalize_request(&a), normalize_request(&b));
    }

    #[test]
    fn request_invariants() {
        let mut r = req("x");
        r.messages.remove(0);
        assert!(r.validate().is_err());
        assert!(req("x").with_temperature(2.5).validate().is_err());
        let mut r = req("x").with_contract(contract::ROUTE_V1);
        assert_eq!(r.temperature, 0.0);
        r.temperature = 0.3;
        assert!(r.validate().is_err());
        assert!(LlmRequest {
            messages: vec![],
            ..req("x")
        }
        .validate()
        .is_err());
    }

    #[test]
    fn replay_hit_and_miss() {
        let mut cassette = Cassette::new();
        cassette.insert(&req("hello"), RecordedResponse::stop("recorded"));
        let gw = LlmGateway::replay(cassette);
        let resp = gw.complete(&req("hello")).unwrap();
        assert_eq!(resp.text, "recorded");
        assert_eq!(resp.provenance, Provenance::Replay);
        assert!(matches!(
            gw.complete(&req("other")),
            Err(GatewayError::CassetteMiss(_))
        ));
    }

    #[test]
    fn record_mode_makes_one_round_trip() {
        let transport = Arc::new(ScriptedTransport::constant("fresh"));
        let gw = LlmGateway::record(transport.clone(), Cassette::new(), GatewayOptions::default());
        let first = gw.complete(&req("same")).unwrap();
        let second = gw.complete(&req("same")).unwrap();
        assert_eq!(first.text, second.text);
        assert_eq!(first.provenance, Provenance::Live);
        assert_eq!(second.provenance, Provenance::Replay);
        assert_eq!(transport.calls(), 1);
        assert_eq!(gw.cassette().len(), 1);
    }

    #[test]
    fn retries_transient_failures_then_reports_count() {
        let transport = Arc::new(ScriptedTransport::new(|_| {
            Err(TransportFailure::retryable("connection reset"))
        }));
        let gw = LlmGateway::live(transport.clone());
        match gw.complete(&req("x")) {
            Err(GatewayError::TransportError { retries, .. }) => assert_eq!(retries, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(transport.calls(), 3);
    }

    #[test]
    fn contract_repair_happens_exactly_once() {
        let transport = Arc::new(ScriptedTransport::constant("not json"));
        let gw = LlmGateway::live(transport.clone());
        let r = req("extract").with_contract(contract::SCENARIO_SPEC_V1);
        assert!(matches!(
            gw.complete(&r),
            Err(GatewayError::ContractViolation { .. })
        ));
        assert_eq!(transport.calls(), 2);
        let repair = &transport.requests()[1];
        assert!(repair.messages.last().unwrap().content.contains("rejected"));
    }

    #[test]
    fn contract_repair_can_succeed() {
        let transport = Arc::new(ScriptedTransport::new(|r: &LlmRequest| {
            let text = if r.messages.len() > 2 {
                r#"{"ue_count": 5}"#
            } else {
                "oops"
            };
            Ok(RecordedResponse::stop(text))
        }));
        let gw = LlmGateway::live(transport);
        let r = req("extract").with_contract(contract::SCENARIO_SPEC_V1);
        assert_eq!(gw.complete(&r).unwrap().text, r#"{"ue_count": 5}"#);
    }
}
