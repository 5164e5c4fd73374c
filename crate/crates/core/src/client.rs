//! Chat and teacher-forcing clients for VLM/solver backends.
//!
//! Three interchangeable implementations of the same traits:
//! - [`HttpBackend`]: JSON-over-HTTP client for an external inference server
//!   (schemas in `docs/protocol.md`), with bounded retries and a deadline;
//! - [`ScriptedChat`] / [`ScriptedLogprobs`]: canned replies for tests, no
//!   networking anywhere in their code path, with call-count probes;
//! - recording / replay wrappers that tee calls to a transcript and serve
//!   them back with the network disabled.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::store::ImageStore;
use crate::transcript::{TranscriptReplayer, TranscriptWriter, KIND_CHAT, KIND_LOGPROBS};
use crate::util::InflightLimiter;

// ---------------------------------------------------------------------------
// Requests and traits
// ---------------------------------------------------------------------------

/// One piece of multimodal chat content, in presentation order.
#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Text(String),
    /// Content ref of an image in the run's [`ImageStore`].
    Image(String),
}

impl Part {
    pub fn text(t: impl Into<String>) -> Part {
        Part::Text(t.into())
    }

    pub fn image(r: impl Into<String>) -> Part {
        Part::Image(r.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChatOptions {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ChatOptions {
    fn default() -> Self {
        ChatOptions {
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: String,
    pub parts: Vec<Part>,
    pub options: ChatOptions,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, parts: Vec<Part>) -> Self {
        ChatRequest {
            system: system.into(),
            parts,
            options: ChatOptions::default(),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    /// Single multimodal completion.
    fn chat(&self, request: &ChatRequest) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogprobRequest {
    pub prompt: String,
    pub image_refs: Vec<String>,
    pub answer_text: String,
}

/// Teacher-forced per-token log-probabilities over prompt + answer tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogprobs {
    pub token_logprobs: Vec<f64>,
    /// Index of the first answer token; everything from here on belongs to
    /// `answer_text`.
    pub answer_start: usize,
}

impl TokenLogprobs {
    /// Bounds check: the answer must start inside the sequence.
    pub fn validate(&self) -> Result<()> {
        if self.answer_start >= self.token_logprobs.len() {
            return Err(Error::protocol(format!(
                "answer_start {} out of range for {} tokens",
                self.answer_start,
                self.token_logprobs.len()
            )));
        }
        Ok(())
    }

    pub fn answer_logprobs(&self) -> &[f64] {
        &self.token_logprobs[self.answer_start..]
    }
}

pub trait LogprobBackend: Send + Sync {
    /// Whether teacher forcing is available; advertised statically by config,
    /// never probed.
    fn supports_logprobs(&self) -> bool;

    fn teacher_forced_logprobs(&self, request: &LogprobRequest) -> Result<TokenLogprobs>;
}

// ---------------------------------------------------------------------------
// Logical JSON encodings (shared by recording, replay, and the HTTP client)
// ---------------------------------------------------------------------------

/// Transcript-side encoding of a chat request. Images stay as content refs;
/// bytes are only inlined on the wire.
pub(crate) fn chat_request_value(request: &ChatRequest) -> Value {
    let parts: Vec<Value> = request
        .parts
        .iter()
        .map(|p| match p {
            Part::Text(t) => json!({ "text": t }),
            Part::Image(r) => json!({ "image_ref": r }),
        })
        .collect();
    json!({
        "system": request.system,
        "parts": parts,
        "options": {
            "temperature": request.options.temperature,
            "max_tokens": request.options.max_tokens,
        },
    })
}

pub(crate) fn logprob_request_value(request: &LogprobRequest) -> Value {
    json!({
        "prompt": request.prompt,
        "image_refs": request.image_refs,
        "answer_text": request.answer_text,
    })
}

fn decode_chat_response(value: &Value) -> Result<String> {
    value
        .get("text")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::protocol(format!("chat response missing \"text\": {value}")))
}

/// Decodes `{"token_logprobs": [...], "answer_start": n}`. JSON cannot carry
/// -inf, so `null` entries stand for -inf on the wire and in transcripts.
fn decode_logprob_response(value: &Value) -> Result<TokenLogprobs> {
    let raw = value
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::protocol("logprob response missing \"token_logprobs\""))?;
    let mut token_logprobs = Vec::with_capacity(raw.len());
    for entry in raw {
        match entry {
            Value::Null => token_logprobs.push(f64::NEG_INFINITY),
            v => token_logprobs.push(v.as_f64().ok_or_else(|| {
                Error::protocol(format!("non-numeric token logprob: {v}"))
            })?),
        }
    }
    let answer_start = value
        .get("answer_start")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::protocol("logprob response missing \"answer_start\""))?
        as usize;
    let decoded = TokenLogprobs {
        token_logprobs,
        answer_start,
    };
    decoded.validate()?;
    Ok(decoded)
}

fn encode_logprob_response(lp: &TokenLogprobs) -> Value {
    // serde_json writes non-finite floats as null, which is exactly the wire
    // convention for -inf; map explicitly anyway for clarity.
    let tokens: Vec<Value> = lp
        .token_logprobs
        .iter()
        .map(|v| if v.is_finite() { json!(v) } else { Value::Null })
        .collect();
    json!({ "token_logprobs": tokens, "answer_start": lp.answer_start })
}

// ---------------------------------------------------------------------------
// Retry policy
// ---------------------------------------------------------------------------

/// Runs `f`, retrying up to `retries` extra times on retryable transport
/// errors with exponential backoff starting at `backoff_ms`.
pub(crate) fn with_retries<T>(
    retries: u32,
    backoff_ms: u64,
    mut f: impl FnMut() -> Result<T>,
) -> Result<T> {
    let mut attempt = 0u32;
    loop {
        match f() {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && attempt < retries => {
                let delay = backoff_ms.saturating_mul(1 << attempt);
                log::warn!("transport error (attempt {}): {e}; retrying", attempt + 1);
                if delay > 0 {
                    std::thread::sleep(Duration::from_millis(delay));
                }
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

/// Connection settings for an HTTP inference server. Every knob is plain
/// config; `from_env` layers `<PREFIX>_URL`, `<PREFIX>_TOKEN` and
/// `<PREFIX>_DEADLINE_MS` on top for deployment overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub base_url: String,
    pub auth_token: Option<String>,
    /// Header carrying the token, sent as "Bearer <token>".
    pub auth_header: String,
    /// Hard per-call deadline; the client never blocks longer than this.
    pub deadline_ms: u64,
    /// Extra attempts after a retryable failure.
    pub retries: u32,
    pub backoff_ms: u64,
    /// Static capability flag for teacher forcing.
    pub supports_logprobs: bool,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "http://127.0.0.1:8080".into(),
            auth_token: None,
            auth_header: "authorization".into(),
            deadline_ms: 30_000,
            retries: 2,
            backoff_ms: 200,
            supports_logprobs: true,
            max_in_flight: 4,
        }
    }
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            ..HttpConfig::default()
        }
    }

    /// Applies environment overrides, e.g. prefix "VLM" reads `VLM_URL`,
    /// `VLM_TOKEN`, `VLM_DEADLINE_MS`.
    pub fn from_env(mut self, prefix: &str) -> Result<Self> {
        if let Ok(url) = std::env::var(format!("{prefix}_URL")) {
            self.base_url = url;
        }
        if let Ok(token) = std::env::var(format!("{prefix}_TOKEN")) {
            self.auth_token = Some(token);
        }
        if let Ok(ms) = std::env::var(format!("{prefix}_DEADLINE_MS")) {
            self.deadline_ms = ms
                .parse()
                .map_err(|_| Error::Config(format!("{prefix}_DEADLINE_MS must be an integer, got {ms:?}")))?;
        }
        Ok(self)
    }
}

/// JSON-over-HTTP client; implements both chat and teacher forcing against
/// `<base_url>/chat` and `<base_url>/logprobs`.
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    store: Arc<ImageStore>,
    limiter: Arc<InflightLimiter>,
}

/// Builds a ureq agent honoring the config's global deadline.
pub(crate) fn build_agent(config: &HttpConfig) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(config.deadline_ms)))
        .http_status_as_error(true)
        .build()
        .into()
}

impl HttpBackend {
    pub fn new(config: HttpConfig, store: Arc<ImageStore>) -> Self {
        let agent = build_agent(&config);
        let limiter = InflightLimiter::new(config.max_in_flight);
        HttpBackend {
            config,
            agent,
            store,
            limiter,
        }
    }

    /// Shares one in-flight limiter with other clients (e.g. the world model
    /// client) so the concurrency cap is global across the run.
    pub fn with_limiter(mut self, limiter: Arc<InflightLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn limiter(&self) -> Arc<InflightLimiter> {
        self.limiter.clone()
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let _slot = self.limiter.acquire();
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let mut request = self.agent.post(&url);
        if let Some(token) = &self.config.auth_token {
            request = request.header(&self.config.auth_header, &format!("Bearer {token}"));
        }
        let mut response = request.send_json(body).map_err(map_ureq)?;
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| Error::protocol(format!("malformed JSON from {url}: {e}")))
    }

    /// Inlines image bytes as base64 PNG; fails on a missing ref before any
    /// network traffic happens.
    fn wire_parts(&self, parts: &[Part]) -> Result<Vec<Value>> {
        parts
            .iter()
            .map(|p| match p {
                Part::Text(t) => Ok(json!({ "text": t })),
                Part::Image(r) => {
                    let bytes = self.store.get(r)?;
                    let b64 = base64::engine::general_purpose::STANDARD.encode(bytes.as_slice());
                    Ok(json!({ "image": b64 }))
                }
            })
            .collect()
    }
}

pub(crate) fn map_ureq(err: ureq::Error) -> Error {
    match err {
        ureq::Error::StatusCode(code) => Error::Transport {
            message: format!("HTTP status {code}"),
            retryable: true,
        },
        ureq::Error::Timeout(reason) => Error::Transport {
            message: format!("request timed out ({reason})"),
            retryable: true,
        },
        ureq::Error::Io(e) => Error::Transport {
            message: format!("connection error: {e}"),
            retryable: true,
        },
        ureq::Error::ConnectionFailed => Error::Transport {
            message: "connection failed".into(),
            retryable: true,
        },
        ureq::Error::HostNotFound => Error::Transport {
            message: "host not found".into(),
            retryable: true,
        },
        other => Error::protocol(format!("http client error: {other}")),
    }
}

impl ChatBackend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        let wire = json!({
            "system": request.system,
            "parts": self.wire_parts(&request.parts)?,
            "options": {
                "temperature": request.options.temperature,
                "max_tokens": request.options.max_tokens,
            },
        });
        let value = with_retries(self.config.retries, self.config.backoff_ms, || {
            self.post("chat", &wire)
        })?;
        decode_chat_response(&value)
    }
}

impl LogprobBackend for HttpBackend {
    fn supports_logprobs(&self) -> bool {
        self.config.supports_logprobs
    }

    fn teacher_forced_logprobs(&self, request: &LogprobRequest) -> Result<TokenLogprobs> {
        if !self.config.supports_logprobs {
            return Err(Error::Capability(
                "backend does not advertise teacher-forced logprobs".into(),
            ));
        }
        let mut images = Vec::with_capacity(request.image_refs.len());
        for r in &request.image_refs {
            let bytes = self.store.get(r)?;
            images.push(base64::engine::general_purpose::STANDARD.encode(bytes.as_slice()));
        }
        let wire = json!({
            "prompt": request.prompt,
            "images": images,
            "answer_text": request.answer_text,
        });
        let value = with_retries(self.config.retries, self.config.backoff_ms, || {
            self.post("logprobs", &wire)
        })?;
        decode_logprob_response(&value)
    }
}

// ---------------------------------------------------------------------------
// Scripted backends for tests
// ---------------------------------------------------------------------------

/// Chat stub: serves queued replies in order, then keeps repeating the last
/// one. Contains no networking code; `call_count` is the probe tests use to
/// verify exactly how many model calls a code path makes.
#[derive(Default)]
pub struct ScriptedChat {
    replies: Mutex<VecDeque<String>>,
    last: Mutex<Option<String>>,
    requests: Mutex<Vec<ChatRequest>>,
    calls: AtomicUsize,
}

impl ScriptedChat {
    pub fn new(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        ScriptedChat {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            ..ScriptedChat::default()
        }
    }

    pub fn push(&self, reply: impl Into<String>) {
        self.replies.lock().unwrap().push_back(reply.into());
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Requests seen so far, for asserting on prompt contents.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().unwrap().push(request.clone());
        let mut last = self.last.lock().unwrap();
        if let Some(reply) = self.replies.lock().unwrap().pop_front() {
            *last = Some(reply.clone());
            return Ok(reply);
        }
        last.clone().ok_or_else(|| {
            Error::protocol("scripted chat backend has no replies queued")
        })
    }
}

/// Teacher-forcing stub with the same queue semantics as [`ScriptedChat`].
#[derive(Default)]
pub struct ScriptedLogprobs {
    replies: Mutex<VecDeque<TokenLogprobs>>,
    last: Mutex<Option<TokenLogprobs>>,
    calls: AtomicUsize,
    /// Set false to simulate a backend without the logprob capability.
    pub capable: bool,
}

impl ScriptedLogprobs {
    pub fn new(replies: impl IntoIterator<Item = TokenLogprobs>) -> Self {
        ScriptedLogprobs {
            replies: Mutex::new(replies.into_iter().collect()),
            last: Mutex::new(None),
            calls: AtomicUsize::new(0),
            capable: true,
        }
    }

    pub fn incapable() -> Self {
        ScriptedLogprobs {
            capable: false,
            ..ScriptedLogprobs::new([])
        }
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LogprobBackend for ScriptedLogprobs {
    fn supports_logprobs(&self) -> bool {
        self.capable
    }

    fn teacher_forced_logprobs(&self, _request: &LogprobRequest) -> Result<TokenLogprobs> {
        if !self.capable {
            return Err(Error::Capability(
                "scripted backend configured without logprobs".into(),
            ));
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut last = self.last.lock().unwrap();
        if let Some(reply) = self.replies.lock().unwrap().pop_front() {
            reply.validate()?;
            *last = Some(reply.clone());
            return Ok(reply);
        }
        last.clone()
            .ok_or_else(|| Error::protocol("scripted logprob backend has no replies queued"))
    }
}

// ---------------------------------------------------------------------------
// Recording and replay wrappers
// ---------------------------------------------------------------------------

/// Tees every call on an inner backend to a transcript.
pub struct RecordingClient<B> {
    inner: B,
    writer: Arc<TranscriptWriter>,
}

impl<B> RecordingClient<B> {
    pub fn new(inner: B, writer: Arc<TranscriptWriter>) -> Self {
        RecordingClient { inner, writer }
    }
}

impl<B: ChatBackend> ChatBackend for RecordingClient<B> {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        let started = Instant::now();
        let reply = self.inner.chat(request)?;
        self.writer.append(
            KIND_CHAT,
            &chat_request_value(request),
            &json!({ "text": reply }),
            started.elapsed().as_millis() as u64,
        )?;
        Ok(reply)
    }
}

impl<B: LogprobBackend> LogprobBackend for RecordingClient<B> {
    fn supports_logprobs(&self) -> bool {
        self.inner.supports_logprobs()
    }

    fn teacher_forced_logprobs(&self, request: &LogprobRequest) -> Result<TokenLogprobs> {
        let started = Instant::now();
        let reply = self.inner.teacher_forced_logprobs(request)?;
        self.writer.append(
            KIND_LOGPROBS,
            &logprob_request_value(request),
            &encode_logprob_response(&reply),
            started.elapsed().as_millis() as u64,
        )?;
        Ok(reply)
    }
}

/// Serves chat and logprob calls from a transcript. Holds no inner backend,
/// so a replayed run is network-free by construction.
pub struct ReplayClient {
    replayer: Arc<TranscriptReplayer>,
    /// Capability flag mirrored from the recording run's config.
    pub logprob_capable: bool,
}

impl ReplayClient {
    pub fn new(replayer: Arc<TranscriptReplayer>) -> Self {
        ReplayClient {
            replayer,
            logprob_capable: true,
        }
    }
}

impl ChatBackend for ReplayClient {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        let value = self.replayer.lookup(KIND_CHAT, &chat_request_value(request))?;
        decode_chat_response(&value)
    }
}

impl LogprobBackend for ReplayClient {
    fn supports_logprobs(&self) -> bool {
        self.logprob_capable
    }

    fn teacher_forced_logprobs(&self, request: &LogprobRequest) -> Result<TokenLogprobs> {
        let value = self
            .replayer
            .lookup(KIND_LOGPROBS, &logprob_request_value(request))?;
        decode_logprob_response(&value)
    }
}

// ---------------------------------------------------------------------------
// In-process HTTP fixture server for tests
// ---------------------------------------------------------------------------
