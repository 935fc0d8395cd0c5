//! Chat-completion access with an on-disk response cache, so that every
//! prompted step can be recorded once and replayed offline.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CACHE_FORMAT_VERSION: u32 = 1;

pub const ENV_ENDPOINT: &str = "KCONFLICT_ENDPOINT";
pub const ENV_API_KEY: &str = "KCONFLICT_API_KEY";
pub const ENV_MODEL: &str = "KCONFLICT_MODEL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model_name: String,
    #[serde(default)]
    pub system_text: String,
    pub user_text: String,
    #[serde(default)]
    pub temperature: f64,
    pub max_tokens: u32,
    /// Which of the independent runs this request belongs to.
    #[serde(default)]
    pub run_index: u32,
}

impl ModelRequest {
    pub fn new(model_name: impl Into<String>, user_text: impl Into<String>) -> Self {
        ModelRequest {
            model_name: model_name.into(),
            system_text: String::new(),
            user_text: user_text.into(),
            temperature: 0.0,
            max_tokens: 1024,
            run_index: 0,
        }
    }

    pub fn with_run(mut self, run_index: u32) -> Self {
        self.run_index = run_index;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.user_text.is_empty() {
            return Err(LlmError::InvalidRequest("user_text is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!("temperature {} is not a finite value >= 0", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    pub cache_hit: bool,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no cached response for key {key}")]
    CacheMiss { key: String },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint configuration: {0}")]
    Config(String),
    #[error("cache entry {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Stable content hash of every field that affects the answer. Fields are
/// length-prefixed so that no two requests share an encoding.
pub fn cache_key(req: &ModelRequest) -> String {
    let mut h = Sha256::new();
    h.update(b"kconflict-llm-v1");
    for field in [&req.model_name, &req.system_text, &req.user_text] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field.as_bytes());
    }
    h.update(req.temperature.to_bits().to_le_bytes());
    h.update(req.max_tokens.to_le_bytes());
    h.update(req.run_index.to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    /// Call the endpoint; the cache is neither read nor written.
    Live,
    /// Answer only from the cache; never touches the transport.
    #[default]
    Replay,
    /// Answer from the cache when possible, otherwise call and store.
    Record,
}

impl FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(GatewayMode::Live),
            "replay" => Ok(GatewayMode::Replay),
            "record" => Ok(GatewayMode::Record),
            other => Err(format!("unknown gateway mode {other:?} (expected live, replay or record)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Worth retrying: timeouts, connection resets, 429 and 5xx.
    Transient(String),
    Fatal(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, req: &ModelRequest) -> Result<(String, Usage), TransportError>;
}

/// Anything that answers model requests.
pub trait Completer: Send + Sync {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, LlmError>;
}

/// Chat-completions over HTTP with a bearer key.
pub struct HttpTransport {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") { base.to_string() } else { format!("{base}/chat/completions") };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport { url, api_key, agent }
    }

    pub fn from_env(timeout: Duration) -> Result<Self, LlmError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| LlmError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        Ok(HttpTransport::new(&endpoint, std::env::var(ENV_API_KEY).ok(), timeout))
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

impl Transport for HttpTransport {
    fn send(&self, req: &ModelRequest) -> Result<(String, Usage), TransportError> {
        let mut messages = Vec::new();
        if !req.system_text.is_empty() {
            messages.push(serde_json::json!({"role": "system", "content": req.system_text}));
        }
        messages.push(serde_json::json!({"role": "user", "content": req.user_text}));
        let body = serde_json::json!({
            "model": req.model_name,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call.send(body.to_string()).map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| TransportError::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            429 | 500..=599 => return Err(TransportError::Transient(format!("http {status}: {text}"))),
            _ => return Err(TransportError::Fatal(format!("http {status}: {text}"))),
        }
        let wire: WireResponse =
            serde_json::from_str(&text).map_err(|e| TransportError::Fatal(format!("malformed response: {e}")))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError::Fatal("response has no message content".into()))?;
        Ok((content, wire.usage.unwrap_or_default()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub cache_dir: PathBuf,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Sustained request rate; `None` disables the limiter.
    pub requests_per_second: Option<f64>,
    pub timeout_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: GatewayMode::Replay,
            cache_dir: PathBuf::from("llm_cache"),
            max_in_flight: 4,
            max_attempts: 4,
            base_backoff_ms: 500,
            max_backoff_ms: 8_000,
            requests_per_second: None,
            timeout_secs: 120,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    format_version: u32,
    key: String,
    request: ModelRequest,
    text: String,
    usage: Usage,
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

struct TokenBucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    /// Time to wait before a request may go out; reserves the token.
    fn reserve(&mut self) -> Duration {
        let now = Instant::now();
        self.tokens = (self.tokens + now.duration_since(self.last).as_secs_f64() * self.rate).min(self.capacity);
        self.last = now;
        self.tokens -= 1.0;
        if self.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.tokens / self.rate)
        }
    }
}

/// Cache-backed access to one transport, safe for concurrent callers.
pub struct Gateway {
    config: GatewayConfig,
    transport: Option<Arc<dyn Transport>>,
    slots: Slots,
    bucket: Option<Mutex<TokenBucket>>,
}

impl Gateway {
    /// `transport` may be `None` only in replay mode.
    pub fn new(config: GatewayConfig, transport: Option<Arc<dyn Transport>>) -> Result<Self, LlmError> {
        if config.mode != GatewayMode::Replay && transport.is_none() {
            return Err(LlmError::Config(format!("{:?} mode needs an endpoint", config.mode).to_lowercase()));
        }
        if config.max_in_flight == 0 || config.max_attempts == 0 {
            return Err(LlmError::Config("max_in_flight and max_attempts must be positive".into()));
        }
        let bucket = match config.requests_per_second {
            Some(r) if r > 0.0 && r.is_finite() => Some(Mutex::new(TokenBucket {
                rate: r,
                capacity: r.max(1.0),
                tokens: r.max(1.0),
                last: Instant::now(),
            })),
            Some(r) => return Err(LlmError::Config(format!("requests_per_second {r} must be positive"))),
            None => None,
        };
        let slots = Slots { free: Mutex::new(config.max_in_flight), cv: Condvar::new() };
        Ok(Gateway { config, transport, slots, bucket })
    }

    pub fn mode(&self) -> GatewayMode {
        self.config.mode
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.config.cache_dir.join(format!("{key}.json"))
    }

    fn read_cache(&self, key: &str) -> Result<Option<CacheEntry>, LlmError> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let entry: CacheEntry =
            serde_json::from_slice(&bytes).map_err(|e| LlmError::Cache { path: path.clone(), message: e.to_string() })?;
        if entry.format_version != CACHE_FORMAT_VERSION || entry.key != key {
            return Err(LlmError::Cache {
                path,
                message: format!("format version {} or key mismatch", entry.format_version),
            });
        }
        Ok(Some(entry))
    }

    fn write_cache(&self, key: &str, req: &ModelRequest, text: &str, usage: Usage) -> Result<(), LlmError> {
        let entry = CacheEntry {
            format_version: CACHE_FORMAT_VERSION,
            key: key.to_string(),
            request: req.clone(),
            text: text.to_string(),
            usage,
        };
        write_atomic(&self.entry_path(key), &serde_json::to_vec_pretty(&entry).expect("cache entry serializes"))?;
        Ok(())
    }

    fn call(&self, req: &ModelRequest) -> Result<(String, Usage), LlmError> {
        let transport = self.transport.as_ref().ok_or_else(|| LlmError::Config("no transport".into()))?;
        let _slot = self.slots.acquire();
        let mut attempt = 0;
        loop {
            attempt += 1;
            if let Some(bucket) = &self.bucket {
                let wait = bucket.lock().unwrap_or_else(|e| e.into_inner()).reserve();
                thread::sleep(wait);
            }
            match transport.send(req) {
                Ok(out) => return Ok(out),
                Err(TransportError::Fatal(m)) => return Err(LlmError::Transport { attempts: attempt, message: m }),
                Err(TransportError::Transient(m)) if attempt >= self.config.max_attempts => {
                    return Err(LlmError::Transport { attempts: attempt, message: m });
                }
                Err(TransportError::Transient(m)) => {
                    let backoff = self
                        .config
                        .base_backoff_ms
                        .saturating_mul(1 << (attempt - 1).min(16))
                        .min(self.config.max_backoff_ms);
                    log::warn!("transient model error (attempt {attempt}): {m}; retrying in {backoff} ms");
                    thread::sleep(Duration::from_millis(backoff));
                }
            }
        }
    }
}

impl Completer for Gateway {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, LlmError> {
        req.validate()?;
        let key = cache_key(req);
        if self.config.mode != GatewayMode::Live {
            if let Some(entry) = self.read_cache(&key)? {
                return Ok(ModelResponse { text: entry.text, usage: entry.usage, latency_ms: 0, cache_hit: true });
            }
            if self.config.mode == GatewayMode::Replay {
                return Err(LlmError::CacheMiss { key });
            }
        }
        let start = Instant::now();
        let (text, usage) = self.call(req)?;
        let latency_ms = start.elapsed().as_millis() as u64;
        if self.config.mode == GatewayMode::Record {
            self.write_cache(&key, req, &text, usage)?;
        }
        Ok(ModelResponse { text, usage, latency_ms, cache_hit: false })
    }
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
