//! Wire transports behind the gateway.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::cassette::RecordedResponse;
use super::{FinishReason, LlmRequest, Usage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct TransportFailure {
    pub message: String,
    /// Whether a retry could plausibly succeed (timeouts, 5xx, connection errors).
    pub retryable: bool,
}

impl TransportFailure {
    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: false,
        }
    }

    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: true,
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &LlmRequest) -> Result<RecordedResponse, TransportFailure>;
}

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub api_base: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    /// Reads `LLM_API_BASE`, `LLM_API_KEY` and `LLM_TIMEOUT_S`.
    pub fn from_env() -> Self {
        let api_base = std::env::var("LLM_API_BASE")
            .unwrap_or_else(|_| "https://api.openai.com/v1".to_string());
        let api_key = std::env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty());
        let timeout = std::env::var("LLM_TIMEOUT_S")
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|s| *s > 0.0)
            .map(Duration::from_secs_f64)
            .unwrap_or(Duration::from_secs(60));
        Self {
            api_base,
            api_key,
            timeout,
        }
    }
}

/// `POST {api_base}/chat/completions` with bearer auth.
pub struct HttpTransport {
    config: HttpConfig,
    // Built lazily: the blocking client owns a runtime and must not be created
    // or dropped on an async executor thread.
    client: OnceLock<reqwest::blocking::Client>,
}

impl HttpTransport {
    pub fn new(config: HttpConfig) -> Self {
        Self {
            config,
            client: OnceLock::new(),
        }
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, TransportFailure> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let c = reqwest::blocking::Client::builder()
            .timeout(self.config.timeout)
            .build()
            .map_err(|e| TransportFailure::fatal(format!("http client: {e}")))?;
        Ok(self.client.get_or_init(|| c))
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

impl Transport for HttpTransport {
    fn send(&self, request: &LlmRequest) -> Result<RecordedResponse, TransportFailure> {
        let client = self.client()?;
        let url = format!(
            "{}/chat/completions",
            self.config.api_base.trim_end_matches('/')
        );
        let messages: Vec<_> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if request.contract.is_some() {
            body["response_format"] = json!({"type": "json_object"});
        }
        let mut builder = client.post(&url).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() {
                TransportFailure::retryable(format!("request to {url} failed: {e}"))
            } else {
                TransportFailure::fatal(format!("request to {url} failed: {e}"))
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let failure = format!("{url} returned {status}: {}", truncate(&text, 300));
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                TransportFailure::retryable(failure)
            } else {
                TransportFailure::fatal(failure)
            });
        }
        let parsed: ChatCompletion = resp.json().map_err(|e| {
            if e.is_timeout() {
                TransportFailure::retryable(format!("reading response: {e}"))
            } else {
                TransportFailure::fatal(format!("malformed chat-completions body: {e}"))
            }
        })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportFailure::fatal("response has no choices"))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some(_) => FinishReason::Error,
        };
        Ok(RecordedResponse {
            text: choice.message.content.unwrap_or_default(),
            finish_reason,
            usage: parsed
                .usage
                .map(|u| Usage {
                    prompt_tokens: u.prompt_tokens,
                    completion_tokens: u.completion_tokens,
                })
                .unwrap_or_default(),
        })
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

type Responder = dyn Fn(&LlmRequest) -> Result<RecordedResponse, TransportFailure> + Send + Sync;

/// In-process transport double: answers from a closure and counts calls.
///
/// Used to author cassettes and to observe how many round trips the gateway
/// actually makes.
pub struct ScriptedTransport {
    responder: Box<Responder>,
    calls: AtomicUsize,
    seen: Mutex<Vec<LlmRequest>>,
}

impl ScriptedTransport {
    pub fn new<F>(responder: F) -> Self
    where
        F: Fn(&LlmRequest) -> Result<RecordedResponse, TransportFailure> + Send + Sync + 'static,
    {
        Self {
            responder: Box::new(responder),
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Always answers with `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(RecordedResponse::stop(text.clone())))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, request: &LlmRequest) -> Result<RecordedResponse, TransportFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().unwrap().push(request.clone());
        (self.responder)(request)
    }
}
