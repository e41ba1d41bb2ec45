//! Generation backends.
//!
//! [`HttpBackend`] speaks the OpenAI-compatible chat-completion shape.
//! [`MockBackend`] is a deterministic stand-in for offline experiments: the
//! `oracle_if_relevant` kind answers correctly only when a relevant passage
//! sits inside the front or back window of the context, which models a
//! reader that ignores the middle of long inputs.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::seed::sha256_hex;
use crate::tokenize::count_tokens;

pub const ANSWER_MAX_TOKENS: usize = 32;
pub const REASONING_MAX_TOKENS: usize = 256;
pub const DEFAULT_API_KEY_ENV: &str = "RAGLAB_API_KEY";

/// What the mock returns when it cannot see a relevant passage.
pub const MOCK_WRONG_ANSWER: &str = "unanswerable";

/// Ground truth handed to mock backends. HTTP backends ignore it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleHint {
    /// 1-based display positions of relevant passages.
    pub relevant_positions: Vec<usize>,
    /// Number of passages in the context.
    pub k: usize,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub prompt: String,
    pub max_tokens: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<OracleHint>,
}

impl GenRequest {
    /// Answer-mode defaults: 32 new tokens, top-p 1, temperature 0.
    pub fn answer(model_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        GenRequest {
            system: None,
            prompt: prompt.into(),
            max_tokens: ANSWER_MAX_TOKENS,
            top_p: 1.0,
            temperature: 0.0,
            model_id: model_id.into(),
            hint: None,
        }
    }

    /// Reasoning-mode defaults: as [`GenRequest::answer`] with 256 tokens.
    pub fn reasoning(model_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        GenRequest {
            max_tokens: REASONING_MAX_TOKENS,
            ..Self::answer(model_id, prompt)
        }
    }

    pub fn with_hint(mut self, hint: OracleHint) -> Self {
        self.hint = Some(hint);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::InvalidConfig("max_tokens must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidConfig(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenResponse {
    pub text: String,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

pub trait Backend: Send + Sync {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        (**self).generate(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        (**self).generate(req)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockKind {
    OracleIfRelevant { window_front: usize, window_back: usize },
    Always { text: String },
    EchoGold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockSpec {
    #[serde(flatten)]
    pub kind: MockKind,
    #[serde(default)]
    pub seed: u64,
}

impl MockSpec {
    pub fn new(kind: MockKind) -> Self {
        MockSpec { kind, seed: 0 }
    }

    pub fn oracle_if_relevant(window_front: usize, window_back: usize) -> Self {
        Self::new(MockKind::OracleIfRelevant {
            window_front,
            window_back,
        })
    }

    pub fn always(text: impl Into<String>) -> Self {
        Self::new(MockKind::Always { text: text.into() })
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    spec: MockSpec,
}

impl MockBackend {
    pub fn new(spec: MockSpec) -> Self {
        MockBackend { spec }
    }

    fn answer(&self, req: &GenRequest) -> Result<String> {
        let hint = || {
            req.hint
                .as_ref()
                .ok_or_else(|| Error::MockMisconfigured("request carries no oracle hint".into()))
        };
        Ok(match &self.spec.kind {
            MockKind::Always { text } => text.clone(),
            MockKind::EchoGold => hint()?.answer.clone(),
            MockKind::OracleIfRelevant {
                window_front,
                window_back,
            } => {
                let h = hint()?;
                let visible = h
                    .relevant_positions
                    .iter()
                    .any(|&p| p <= *window_front || p + window_back > h.k);
                if visible {
                    h.answer.clone()
                } else {
                    MOCK_WRONG_ANSWER.to_string()
                }
            }
        })
    }
}

impl Backend for MockBackend {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        req.validate()?;
        let text = self.answer(req)?;
        Ok(GenResponse {
            prompt_tokens: count_tokens(&req.prompt),
            completion_tokens: count_tokens(&text),
            text,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64.checked_shl(attempt).unwrap_or(u64::MAX));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full chat-completions URL, e.g. `http://localhost:8000/v1/chat/completions`.
    pub url: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_timeout() -> u64 {
    120
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        HttpConfig {
            url: url.into(),
            api_key_env: default_key_env(),
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: usize,
    #[serde(default)]
    completion_tokens: usize,
}

impl HttpBackend {
    /// Reads the API key from `config.api_key_env`; a missing variable means
    /// requests are sent without an `Authorization` header.
    pub fn new(config: HttpConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpBackend {
            config,
            api_key,
            client,
        })
    }

    pub fn request_body(req: &GenRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if let Some(system) = &req.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.prompt}));
        json!({
            "model": req.model_id,
            "messages": messages,
            "max_tokens": req.max_tokens,
            "top_p": req.top_p,
            "temperature": req.temperature,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<GenResponse, (bool, Error)> {
        let mut builder = self.client.post(&self.config.url).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                (true, Error::Timeout)
            } else {
                (true, Error::Transport(e.to_string()))
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| (true, Error::Transport(e.to_string())))?;
        if status == 429 || (500..600).contains(&status) {
            return Err((true, Error::EndpointError { status, body: text }));
        }
        if !(200..300).contains(&status) {
            return Err((false, Error::EndpointError { status, body: text }));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| (false, Error::Transport(format!("unexpected response body: {e}"))))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| (false, Error::Transport("response has no choices".into())))?;
        let usage = parsed.usage.unwrap_or(ChatUsage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok(GenResponse {
            text: content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }
}

impl Backend for HttpBackend {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        req.validate()?;
        let body = Self::request_body(req);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err((true, err)) if attempt < self.config.retry.max_retries => {
                    let wait = self.config.retry.delay(attempt);
                    log::warn!("generation attempt {} failed ({err}); retrying in {wait:?}", attempt + 1);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err((_, err)) => return Err(err),
            }
        }
    }
}

/// Serves responses from a directory of `<sha256(prompt)>.txt` files,
/// falling back to (and filling the cache from) an inner backend.
pub struct CachedBackend<B> {
    dir: PathBuf,
    inner: Option<B>,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(dir: impl Into<PathBuf>, inner: Option<B>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(CachedBackend { dir, inner })
    }

    pub fn entry_path(&self, prompt: &str) -> PathBuf {
        self.dir.join(format!("{}.txt", sha256_hex(prompt.as_bytes())))
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        let path = self.entry_path(&req.prompt);
        if let Ok(text) = fs::read_to_string(&path) {
            return Ok(GenResponse {
                prompt_tokens: count_tokens(&req.prompt),
                completion_tokens: count_tokens(&text),
                text,
            });
        }
        let inner = self.inner.as_ref().ok_or_else(|| {
            Error::LabelerUnavailable(format!("no cached response at {} and no live backend", path.display()))
        })?;
        let resp = inner.generate(req)?;
        fs::write(&path, &resp.text).map_err(|e| Error::io(&path, e))?;
        Ok(resp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub prompt_sha256: String,
    pub model_id: String,
    pub prompt: String,
    pub response: GenResponse,
}

/// Appends every successful request/response pair to a JSONL log.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<BufWriter<File>>,
    path: PathBuf,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RecordingBackend {
            inner,
            log: Mutex::new(BufWriter::new(file)),
            path: path.to_path_buf(),
        })
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        let resp = self.inner.generate(req)?;
        let entry = LogEntry {
            prompt_sha256: sha256_hex(req.prompt.as_bytes()),
            model_id: req.model_id.clone(),
            prompt: req.prompt.clone(),
            response: resp.clone(),
        };
        let mut log = self.log.lock().expect("log writer poisoned");
        serde_json::to_writer(&mut *log, &entry)?;
        log.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        log.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(resp)
    }
}

/// Answers from a [`RecordingBackend`] log without touching the network.
pub struct ReplayBackend {
    responses: HashMap<String, GenResponse>,
}

impl ReplayBackend {
    pub fn from_log(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut responses = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogEntry = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: n + 1,
                reason: e.to_string(),
            })?;
            responses.insert(entry.prompt_sha256, entry.response);
        }
        Ok(ReplayBackend { responses })
    }
}

impl Backend for ReplayBackend {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        let key = sha256_hex(req.prompt.as_bytes());
        self.responses
            .get(&key)
            .cloned()
            .ok_or(Error::MissingTranscriptEntry(key))
    }
}

/// A backend that refuses every request; used for offline replays.
pub struct OfflineBackend;

impl Backend for OfflineBackend {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        Err(Error::MissingTranscriptEntry(sha256_hex(req.prompt.as_bytes())))
    }
}

/// Runs `requests` with at most `parallelism` in flight. Results come back
/// in request order; failures are reported per request.
pub fn batch_generate<B: Backend + ?Sized>(
    requests: &[GenRequest],
    parallelism: usize,
    backend: &B,
) -> Vec<Result<GenResponse>> {
    let workers = parallelism.max(1).min(requests.len());
    if workers <= 1 {
        return requests.iter().map(|r| backend.generate(r)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<GenResponse>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= requests.len() {
                    break;
                }
                let result = backend.generate(&requests[i]);
                *slots[i].lock().expect("slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot poisoned").expect("every request is processed"))
        .collect()
}
