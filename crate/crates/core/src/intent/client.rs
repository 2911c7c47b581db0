//! Completion client: backends, retries, bounded concurrency and an on-disk
//! content-addressed response cache.
//!
//! Cache layout: `<root>/{profiles|audits}/<sha256>.json`, where the hash
//! covers `(model_id, system, user)`. Entries are written to a temporary file
//! and renamed into place, so concurrent writers of the same key are safe.

use super::prompt::{Prompt, PromptKind};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("network error: {0}")]
    Network(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("no cached completion for prompt {0} and no live backend")]
    CacheMiss(String),
    #[error("missing configuration: {0}")]
    Config(String),
    #[error("backend unavailable: every request failed ({0})")]
    BackendDown(String),
}

impl LlmError {
    /// Errors worth retrying: transport failures, throttling and server errors.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Network(_) => true,
            LlmError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A completion backend. Implementations must be deterministic for the cache
/// contract to be meaningful, or at least tolerate cached replays.
pub trait LlmBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError>;
}

/// Connection settings for an HTTP endpoint.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
        }
    }
}

/// POSTs a JSON body and returns the parsed JSON response.
pub fn post_json(
    cfg: &HttpConfig,
    body: &serde_json::Value,
) -> Result<serde_json::Value, LlmError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| LlmError::Network(e.to_string()))?;
    let mut req = client.post(&cfg.url).json(body);
    if let Some(key) = &cfg.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| LlmError::Network(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| LlmError::Network(e.to_string()))?;
    if !status.is_success() {
        return Err(LlmError::Http {
            status: status.as_u16(),
            body: text,
        });
    }
    serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))
}

/// Chat-completion endpoint: `POST {model, messages: [{role, content}, ...]}`.
pub struct RemoteBackend {
    http: HttpConfig,
    model: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Option<Vec<ChatChoice>>,
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl RemoteBackend {
    pub fn new(http: HttpConfig, model: impl Into<String>) -> Self {
        Self {
            http,
            model: model.into(),
        }
    }

    /// Reads `L2IR_LLM_URL`, `L2IR_LLM_KEY` and `L2IR_LLM_MODEL`.
    pub fn from_env() -> Result<Self, LlmError> {
        let url =
            std::env::var("L2IR_LLM_URL").map_err(|_| LlmError::Config("L2IR_LLM_URL".into()))?;
        let model = std::env::var("L2IR_LLM_MODEL")
            .map_err(|_| LlmError::Config("L2IR_LLM_MODEL".into()))?;
        let mut http = HttpConfig::new(url);
        http.api_key = std::env::var("L2IR_LLM_KEY").ok();
        Ok(Self::new(http, model))
    }

    pub fn request_body(&self, prompt: &Prompt) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        })
    }
}

impl LlmBackend for RemoteBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        let raw = post_json(&self.http, &self.request_body(prompt))?;
        let resp: ChatResponse =
            serde_json::from_value(raw).map_err(|e| LlmError::Malformed(e.to_string()))?;
        resp.choices
            .and_then(|c| c.into_iter().next())
            .map(|c| c.message.content)
            .or(resp.content)
            .ok_or_else(|| LlmError::Malformed("response has no completion content".into()))
    }
}

/// Serves nothing: every request is a cache miss. Used when a stage must
/// run from previously cached completions only.
pub struct CacheOnlyBackend {
    model: String,
}

impl CacheOnlyBackend {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
        }
    }
}

impl LlmBackend for CacheOnlyBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        Err(LlmError::CacheMiss(prompt.cache_key(&self.model)))
    }
}

/// Wraps a backend and counts the calls that reach it.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: LlmBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: LlmBackend> LlmBackend for CountingBackend<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt_hash: String,
    pub model: String,
    pub text: String,
    /// Unix seconds at write time.
    pub timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct CompletionCache {
    root: PathBuf,
}

impl CompletionCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, kind: PromptKind, key: &str) -> PathBuf {
        self.root.join(kind.dir_name()).join(format!("{key}.json"))
    }

    pub fn get(&self, kind: PromptKind, key: &str) -> Option<CacheEntry> {
        let bytes = fs::read(self.path(kind, key)).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(e) if e.prompt_hash == key => Some(e),
            Ok(_) | Err(_) => {
                log::warn!("ignoring corrupt cache entry {key}");
                None
            }
        }
    }

    pub fn put(&self, kind: PromptKind, entry: &CacheEntry) -> std::io::Result<()> {
        let dir = self.root.join(kind.dir_name());
        fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!(
            ".{}.{}.{:?}.tmp",
            entry.prompt_hash,
            std::process::id(),
            std::thread::current().id()
        ));
        fs::write(
            &tmp,
            serde_json::to_vec_pretty(entry).expect("serializable"),
        )?;
        fs::rename(&tmp, self.path(kind, &entry.prompt_hash))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Cached, retrying, concurrency-bounded completion client.
pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    cache: Option<CompletionCache>,
    retry: RetryPolicy,
    max_in_flight: usize,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }

    pub fn with_cache(mut self, cache: CompletionCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    pub fn cache(&self) -> Option<&CompletionCache> {
        self.cache.as_ref()
    }

    /// Returns the completion for `prompt`, from cache when possible.
    pub fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        let key = prompt.cache_key(self.backend.model_id());
        if let Some(entry) = self.cache.as_ref().and_then(|c| c.get(prompt.kind, &key)) {
            return Ok(entry.text);
        }
        let text = self.call_with_retry(prompt)?;
        if let Some(cache) = &self.cache {
            let entry = CacheEntry {
                prompt_hash: key,
                model: self.backend.model_id().to_string(),
                text: text.clone(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
            };
            if let Err(e) = cache.put(prompt.kind, &entry) {
                log::warn!("cache write failed for {}: {e}", entry.prompt_hash);
            }
        }
        Ok(text)
    }

    fn call_with_retry(&self, prompt: &Prompt) -> Result<String, LlmError> {
        let mut attempt = 0;
        loop {
            match self.backend.complete(prompt) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() && attempt < self.retry.max_retries => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt);
                    log::debug!(
                        "transient backend error ({e}); retry {} in {delay:?}",
                        attempt + 1
                    );
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Completes a batch with at most `max_in_flight` concurrent requests.
    /// Results keep input order.
    pub fn complete_all(&self, prompts: &[Prompt]) -> Vec<Result<String, LlmError>> {
        use rayon::prelude::*;
        match rayon::ThreadPoolBuilder::new()
            .num_threads(self.max_in_flight)
            .build()
        {
            Ok(pool) => pool.install(|| prompts.par_iter().map(|p| self.complete(p)).collect()),
            Err(e) => {
                log::warn!("falling back to sequential completion: {e}");
                prompts.iter().map(|p| self.complete(p)).collect()
            }
        }
    }
}
