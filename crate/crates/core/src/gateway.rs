//! Provider-agnostic completion boundary.
//!
//! [`Gateway`] wraps any [`LlmBackend`], enforces the call deadline and
//! appends every call to a [`Transcript`]. [`MockBackend`] answers from a
//! script so every LLM-dependent path runs offline; [`HttpBackend`] speaks a
//! chat-completion protocol common to hosted endpoints.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(90);
pub const MOCK_DEADLINE: Duration = Duration::from_secs(1);

pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_BASE_URL: &str = "LLM_BASE_URL";
pub const ENV_MODEL: &str = "LLM_MODEL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("LLM call exceeded its deadline of {0:?}")]
    TimedOut(Duration),
    #[error("LLM backend unavailable: {0}")]
    Unavailable(String),
    #[error("LLM authentication failed: {0}")]
    AuthFailed(String),
    #[error("mock script has no rules")]
    EmptyScript,
    #[error("invalid mock script: {0}")]
    InvalidScript(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(with = "duration_ms")]
    pub deadline: Duration,
    pub model_name: String,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 2048,
            deadline: DEFAULT_DEADLINE,
            model_name: "gpt-4".to_string(),
        }
    }
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

pub trait LlmBackend: Send + Sync + 'static {
    fn name(&self) -> String;
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, GatewayError>;
}

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub backend: String,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
    pub latency_ms: u64,
}

/// Append-only record of gateway calls.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, mut entry: TranscriptEntry) {
        entry.seq = self.entries.len() + 1;
        self.entries.push(entry);
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("transcript entries serialize"));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    params: CompletionParams,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("params", &self.params)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>, params: CompletionParams) -> Self {
        Self { backend, params }
    }

    /// A gateway whose every call fails with `Unavailable`; callers take
    /// their fallback paths.
    pub fn disabled() -> Self {
        Self::new(Arc::new(DisabledBackend), CompletionParams::default())
    }

    pub fn mock(backend: MockBackend) -> Self {
        Self::new(
            Arc::new(backend),
            CompletionParams {
                deadline: MOCK_DEADLINE,
                ..CompletionParams::default()
            },
        )
    }

    pub fn params(&self) -> &CompletionParams {
        &self.params
    }

    pub fn backend_name(&self) -> String {
        self.backend.name()
    }

    /// Runs one completion under the deadline and records it.
    pub fn complete(&self, prompt: &str, transcript: &mut Transcript) -> Result<String, GatewayError> {
        let started = Instant::now();
        let result = self.call_with_deadline(prompt);
        let latency_ms = started.elapsed().as_millis() as u64;
        let (response, error) = match &result {
            Ok(text) => (Some(text.clone()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        transcript.push(TranscriptEntry {
            seq: 0,
            backend: self.backend.name(),
            prompt: prompt.to_string(),
            response,
            error,
            latency_ms,
        });
        result
    }

    fn call_with_deadline(&self, prompt: &str) -> Result<String, GatewayError> {
        let (tx, rx) = mpsc::channel();
        let backend = Arc::clone(&self.backend);
        let params = self.params.clone();
        let prompt = prompt.to_string();
        std::thread::Builder::new()
            .name("llm-call".into())
            .spawn(move || {
                // The receiver may be gone after a timeout.
                let _ = tx.send(backend.complete(&prompt, &params));
            })
            .map_err(|e| GatewayError::Unavailable(e.to_string()))?;
        match rx.recv_timeout(self.params.deadline) {
            Ok(r) => r,
            Err(mpsc::RecvTimeoutError::Timeout) => Err(GatewayError::TimedOut(self.params.deadline)),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(GatewayError::Unavailable("backend worker panicked".into()))
            }
        }
    }
}

struct DisabledBackend;

impl LlmBackend for DisabledBackend {
    fn name(&self) -> String {
        "disabled".into()
    }

    fn complete(&self, _prompt: &str, _params: &CompletionParams) -> Result<String, GatewayError> {
        Err(GatewayError::Unavailable("no LLM backend configured".into()))
    }
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Matcher {
    /// Prompt contains the text.
    Contains(String),
    /// The n-th call to this backend (0-based).
    Index(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    Fail(GatewayError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockRule {
    pub matcher: Matcher,
    pub reply: MockReply,
    pub delay: Option<Duration>,
}

impl MockRule {
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Contains(needle.into()),
            reply: MockReply::Text(response.into()),
            delay: None,
        }
    }

    pub fn index(i: usize, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Index(i),
            reply: MockReply::Text(response.into()),
            delay: None,
        }
    }

    pub fn with_delay(mut self, d: Duration) -> Self {
        self.delay = Some(d);
        self
    }
}

/// Scripted backend: answers with the first rule matching the prompt (or
/// the call index); an unmatched prompt is `Unavailable`.
#[derive(Debug)]
pub struct MockBackend {
    rules: Vec<MockRule>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Result<Self, GatewayError> {
        if rules.is_empty() {
            return Err(GatewayError::EmptyScript);
        }
        Ok(Self {
            rules,
            calls: AtomicUsize::new(0),
        })
    }

    /// Responses answered strictly in order.
    pub fn queue<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Result<Self, GatewayError> {
        Self::new(
            responses
                .into_iter()
                .enumerate()
                .map(|(i, r)| MockRule::index(i, r))
                .collect(),
        )
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmBackend for MockBackend {
    fn name(&self) -> String {
        "mock".into()
    }

    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<String, GatewayError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        let rule = self.rules.iter().find(|r| match &r.matcher {
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::Index(i) => *i == call,
        });
        let Some(rule) = rule else {
            return Err(GatewayError::Unavailable(format!("no mock rule matches call {call}")));
        };
        if let Some(d) = rule.delay {
            std::thread::sleep(d);
        }
        match &rule.reply {
            MockReply::Text(t) => Ok(t.clone()),
            MockReply::Fail(e) => Err(e.clone()),
        }
    }
}

/// Parses a mock script document.
///
/// Accepted forms: a list of responses (answered in order), or an object
/// `{"rules": [...]}` whose rules carry `match` (`{"contains": text}` or
/// `{"index": n}`), a `response` (text, or any structured value which is
/// serialized), an optional `error` (`unavailable`, `auth`, `timeout`) and an
/// optional `delay_ms`.
pub fn mock_load(script: &str) -> Result<MockBackend, GatewayError> {
    let doc: Json = serde_json::from_str(script).map_err(|e| GatewayError::InvalidScript(e.to_string()))?;
    let bad = |m: &str| GatewayError::InvalidScript(m.to_string());
    let render = |v: &Json| match v {
        Json::String(s) => s.clone(),
        other => other.to_string(),
    };
    match &doc {
        Json::Array(items) => MockBackend::queue(items.iter().map(render)),
        Json::Object(o) => {
            let rules = o
                .get("rules")
                .and_then(Json::as_array)
                .ok_or_else(|| bad("expected a `rules` list"))?;
            let mut out = Vec::with_capacity(rules.len());
            for r in rules {
                let m = r.get("match").ok_or_else(|| bad("rule without `match`"))?;
                let matcher = if let Some(s) = m.get("contains").and_then(Json::as_str) {
                    Matcher::Contains(s.to_string())
                } else if let Some(i) = m.get("index").and_then(Json::as_u64) {
                    Matcher::Index(i as usize)
                } else if let Some(s) = m.as_str() {
                    Matcher::Contains(s.to_string())
                } else {
                    return Err(bad("`match` needs `contains` or `index`"));
                };
                let reply = match (r.get("response"), r.get("error").and_then(Json::as_str)) {
                    (_, Some("unavailable")) => MockReply::Fail(GatewayError::Unavailable("scripted".into())),
                    (_, Some("auth")) => MockReply::Fail(GatewayError::AuthFailed("scripted".into())),
                    (_, Some("timeout")) => MockReply::Fail(GatewayError::TimedOut(MOCK_DEADLINE)),
                    (_, Some(other)) => return Err(bad(&format!("unknown scripted error `{other}`"))),
                    (Some(resp), None) => MockReply::Text(render(resp)),
                    (None, None) => return Err(bad("rule without `response`")),
                };
                let delay = r.get("delay_ms").and_then(Json::as_u64).map(Duration::from_millis);
                out.push(MockRule { matcher, reply, delay });
            }
            MockBackend::new(out)
        }
        _ => Err(bad("script must be a list or an object")),
    }
}

pub fn mock_load_file(path: &Path) -> Result<MockBackend, GatewayError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::InvalidScript(format!("{}: {e}", path.display())))?;
    mock_load(&text)
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

/// Chat-completion client: `POST {base_url}/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    api_key: String,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        let api_key = api_key.into();
        if api_key.trim().is_empty() {
            return Err(GatewayError::AuthFailed(format!("{ENV_API_KEY} is empty")));
        }
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
        })
    }

    /// Reads the key from `LLM_API_KEY`; `base_url` falls back to
    /// `LLM_BASE_URL`.
    pub fn from_env(base_url: Option<&str>) -> Result<Self, GatewayError> {
        let key = std::env::var(ENV_API_KEY)
            .map_err(|_| GatewayError::AuthFailed(format!("{ENV_API_KEY} is not set")))?;
        let url = match base_url.filter(|u| !u.is_empty()) {
            Some(u) => u.to_string(),
            None => std::env::var(ENV_BASE_URL)
                .map_err(|_| GatewayError::Unavailable(format!("no base URL and {ENV_BASE_URL} unset")))?,
        };
        Self::new(url, key)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

/// Request body for a single-turn completion.
pub fn request_body(prompt: &str, params: &CompletionParams) -> Json {
    json!({
        "model": params.model_name,
        "messages": [{ "role": "user", "content": prompt }],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    })
}

/// Pulls the first choice's message text out of a completion response.
pub fn response_text(body: &Json) -> Result<String, GatewayError> {
    body.pointer("/choices/0/message/content")
        .and_then(Json::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Unavailable("completion response has no message content".into()))
}

impl LlmBackend for HttpBackend {
    fn name(&self) -> String {
        format!("http:{}", self.base_url)
    }

    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(params.deadline)
            .build()
            .map_err(|e| GatewayError::Unavailable(e.to_string()))?;
        let resp = client
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .json(&request_body(prompt, params))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    GatewayError::TimedOut(params.deadline)
                } else {
                    GatewayError::Unavailable(e.to_string())
                }
            })?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(GatewayError::AuthFailed(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(GatewayError::Unavailable(format!("HTTP {status}")));
        }
        let body: Json = resp.json().map_err(|e| GatewayError::Unavailable(e.to_string()))?;
        response_text(&body)
    }
}
