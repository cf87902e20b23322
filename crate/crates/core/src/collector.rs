//! Description collection from multimodal chat-completion endpoints.
//!
//! Each (image, model, prompt) triple is asked once. Responses are appended
//! to a JSONL store and never re-requested, so a re-run only fills gaps and
//! an endpoint that ignores temperature 0 still yields one frozen answer.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{resolve_uri, ImageRecord};

pub const DEFAULT_PROMPT: &str = "Describe this person objectively.";
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_RETRY_LIMIT: u32 = 3;
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EndpointError {
    /// Worth retrying: timeouts, throttling, server errors.
    #[error("transient endpoint failure: {0}")]
    Transient(String),
    #[error("endpoint rejected the request: {0}")]
    Fatal(String),
    #[error("cannot read image: {0}")]
    ImageUnreadable(String),
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("{model_id} failed on {image_id} after {attempts} attempt(s): {source}")]
    Endpoint {
        image_id: String,
        model_id: String,
        attempts: u32,
        source: EndpointError,
    },
    #[error("{model_id} returned an empty description for {image_id}")]
    EmptyResponse { image_id: String, model_id: String },
    #[error("image {image_id} unreadable: {message}")]
    ImageUnreadable { image_id: String, message: String },
    #[error("no endpoint configured for model {0}")]
    NoEndpoint(String),
    #[error("description store {path}: {message}")]
    Store { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub image_id: String,
    pub model_id: String,
    pub prompt: String,
    pub text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub collected_at: String,
}

impl DescriptionRecord {
    fn store_key(&self) -> StoreKey {
        (self.image_id.clone(), self.model_id.clone(), prompt_digest(&self.prompt))
    }
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// What one endpoint call carries besides the image.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// One multimodal chat session: the image, then the prompt.
pub trait ChatEndpoint: Send + Sync {
    fn complete(&self, image: &ImageRecord, request: &ChatRequest) -> Result<String, EndpointError>;
}

impl<F> ChatEndpoint for F
where
    F: Fn(&ImageRecord, &ChatRequest) -> Result<String, EndpointError> + Send + Sync,
{
    fn complete(&self, image: &ImageRecord, request: &ChatRequest) -> Result<String, EndpointError> {
        self(image, request)
    }
}

/// OpenAI-compatible `POST {base_url}/chat/completions` with one
/// base64 data-URL image part followed by one text part.
pub struct OpenAiEndpoint {
    url: String,
    model: String,
    api_key: Option<String>,
    image_root: Option<PathBuf>,
    client: reqwest::blocking::Client,
}

impl OpenAiEndpoint {
    /// `model` is the provider's model name, which may differ from the
    /// model_id used to label records.
    pub fn new(
        base_url: &str,
        model: impl Into<String>,
        api_key: Option<String>,
        image_root: Option<PathBuf>,
        timeout: Duration,
    ) -> Result<Self, EndpointError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EndpointError::Fatal(e.to_string()))?;
        Ok(Self {
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            api_key,
            image_root,
            client,
        })
    }

    fn image_data_url(&self, image: &ImageRecord) -> Result<String, EndpointError> {
        let uri = image
            .uri
            .as_deref()
            .ok_or_else(|| EndpointError::ImageUnreadable(format!("{} has no uri", image.image_id)))?;
        let path = resolve_uri(self.image_root.as_deref(), uri);
        let bytes = fs::read(&path).map_err(|e| EndpointError::ImageUnreadable(format!("{}: {e}", path.display())))?;
        let mime = image::guess_format(&bytes)
            .map(|f| f.to_mime_type())
            .map_err(|e| EndpointError::ImageUnreadable(format!("{}: {e}", path.display())))?;
        Ok(format!(
            "data:{mime};base64,{}",
            base64::engine::general_purpose::STANDARD.encode(&bytes)
        ))
    }

    pub fn request_body(&self, data_url: &str, request: &ChatRequest) -> serde_json::Value {
        json!({
            "model": self.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "image_url", "image_url": {"url": data_url}},
                    {"type": "text", "text": request.prompt},
                ],
            }],
        })
    }
}

impl ChatEndpoint for OpenAiEndpoint {
    fn complete(&self, image: &ImageRecord, request: &ChatRequest) -> Result<String, EndpointError> {
        let body = self.request_body(&self.image_data_url(image)?, request);
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| EndpointError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(EndpointError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let detail = resp.text().unwrap_or_default();
            return Err(EndpointError::Fatal(format!("HTTP {status}: {detail}")));
        }
        let value: serde_json::Value = resp.json().map_err(|e| EndpointError::Transient(e.to_string()))?;
        let content = &value["choices"][0]["message"]["content"];
        match content {
            serde_json::Value::String(s) => Ok(s.clone()),
            // some providers return a list of content parts
            serde_json::Value::Array(parts) => Ok(parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join("")),
            serde_json::Value::Null => Ok(String::new()),
            other => Err(EndpointError::Fatal(format!("unexpected content: {other}"))),
        }
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Stamps every record with the same instant.
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectorConfig {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Retries after the first attempt.
    pub retry_limit: u32,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
    /// In-flight requests across all models.
    pub concurrency: usize,
    /// Per-model cap; `None` means unthrottled.
    pub requests_per_minute: Option<u32>,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        Self {
            prompt: DEFAULT_PROMPT.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            retry_limit: DEFAULT_RETRY_LIMIT,
            backoff_initial_ms: 500,
            backoff_max_ms: 30_000,
            concurrency: DEFAULT_CONCURRENCY,
            requests_per_minute: None,
        }
    }
}

impl CollectorConfig {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_initial_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.backoff_max_ms);
        Duration::from_millis(ms)
    }

    fn request(&self, model_id: &str) -> ChatRequest {
        ChatRequest {
            model_id: model_id.to_string(),
            prompt: self.prompt.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }
}

type StoreKey = (String, String, String);

struct StoreInner {
    records: BTreeMap<StoreKey, DescriptionRecord>,
    writer: Option<BufWriter<File>>,
}

/// Append-only JSONL description store, safe to share between workers.
pub struct DescriptionStore {
    path: Option<PathBuf>,
    inner: Mutex<StoreInner>,
}

impl DescriptionStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(StoreInner {
                records: BTreeMap::new(),
                writer: None,
            }),
        }
    }

    /// Opens or creates the store at `path`. Later duplicates of a key in
    /// the file are ignored.
    pub fn open(path: &Path) -> Result<Self, CollectError> {
        let err = |message: String| CollectError::Store {
            path: path.display().to_string(),
            message,
        };
        let mut records = BTreeMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| err(e.to_string()))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: DescriptionRecord =
                    serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
                records.entry(rec.store_key()).or_insert(rec);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| err(e.to_string()))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(StoreInner {
                records,
                writer: Some(BufWriter::new(file)),
            }),
        })
    }

    fn store_error(&self, message: String) -> CollectError {
        CollectError::Store {
            path: self
                .path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<memory>".into()),
            message,
        }
    }

    pub fn get(&self, image_id: &str, model_id: &str, prompt: &str) -> Option<DescriptionRecord> {
        let key = (image_id.to_string(), model_id.to_string(), prompt_digest(prompt));
        self.inner.lock().unwrap().records.get(&key).cloned()
    }

    /// Returns `false` and keeps the stored record when the key exists.
    pub fn insert(&self, record: DescriptionRecord) -> Result<bool, CollectError> {
        let mut inner = self.inner.lock().unwrap();
        let key = record.store_key();
        if inner.records.contains_key(&key) {
            return Ok(false);
        }
        if let Some(w) = inner.writer.as_mut() {
            let line = serde_json::to_string(&record).map_err(|e| self.store_error(e.to_string()))?;
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| self.store_error(e.to_string()))?;
        }
        inner.records.insert(key, record);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records ordered by image_id, model_id, prompt digest.
    pub fn records(&self) -> Vec<DescriptionRecord> {
        self.inner.lock().unwrap().records.values().cloned().collect()
    }

    /// Rewrites the backing file in key order.
    pub fn compact(&self) -> Result<(), CollectError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut inner = self.inner.lock().unwrap();
        let tmp = path.with_extension("jsonl.tmp");
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for rec in inner.records.values() {
                serde_json::to_writer(&mut w, rec)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| self.store_error(e.to_string()))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| self.store_error(e.to_string()))?;
        inner.writer = Some(BufWriter::new(file));
        Ok(())
    }
}

/// Minimum spacing between request starts on one endpoint.
struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn per_minute(rpm: u32) -> Self {
        Self {
            interval: Duration::from_secs_f64(60.0 / rpm.max(1) as f64),
            next: Mutex::new(Instant::now()),
        }
    }

    fn wait(&self) {
        let slot = {
            let mut next = self.next.lock().unwrap();
            let slot = (*next).max(Instant::now());
            *next = slot + self.interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Cached,
    Collected,
}

/// Returns the stored description, or asks the endpoint and stores the
/// answer.
pub fn collect_description(
    image: &ImageRecord,
    model_id: &str,
    endpoint: &dyn ChatEndpoint,
    store: &DescriptionStore,
    config: &CollectorConfig,
    clock: &dyn Clock,
) -> Result<(DescriptionRecord, Outcome), CollectError> {
    collect_one(image, model_id, endpoint, store, config, clock, None)
}

fn collect_one(
    image: &ImageRecord,
    model_id: &str,
    endpoint: &dyn ChatEndpoint,
    store: &DescriptionStore,
    config: &CollectorConfig,
    clock: &dyn Clock,
    limiter: Option<&RateLimiter>,
) -> Result<(DescriptionRecord, Outcome), CollectError> {
    if let Some(rec) = store.get(&image.image_id, model_id, &config.prompt) {
        return Ok((rec, Outcome::Cached));
    }
    let request = config.request(model_id);
    let mut attempt = 0;
    let text = loop {
        if let Some(l) = limiter {
            l.wait();
        }
        match endpoint.complete(image, &request) {
            Ok(text) => break text,
            Err(EndpointError::ImageUnreadable(message)) => {
                return Err(CollectError::ImageUnreadable {
                    image_id: image.image_id.clone(),
                    message,
                })
            }
            Err(e @ EndpointError::Transient(_)) if attempt < config.retry_limit => {
                log::warn!("{model_id}/{}: {e}; retrying", image.image_id);
                std::thread::sleep(config.backoff(attempt));
                attempt += 1;
            }
            Err(source) => {
                return Err(CollectError::Endpoint {
                    image_id: image.image_id.clone(),
                    model_id: model_id.to_string(),
                    attempts: attempt + 1,
                    source,
                })
            }
        }
    };
    if text.trim().is_empty() {
        return Err(CollectError::EmptyResponse {
            image_id: image.image_id.clone(),
            model_id: model_id.to_string(),
        });
    }
    let record = DescriptionRecord {
        image_id: image.image_id.clone(),
        model_id: model_id.to_string(),
        prompt: config.prompt.clone(),
        text,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
        collected_at: clock.now().to_rfc3339_opts(SecondsFormat::Secs, true),
    };
    store.insert(record.clone())?;
    Ok((record, Outcome::Collected))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub image_id: String,
    pub model_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionSummary {
    pub completed: usize,
    pub cached: usize,
    pub failed: usize,
    /// Sorted by model, then image.
    pub failures: Vec<Failure>,
}

impl CollectionSummary {
    pub fn failed_image_ids(&self) -> Vec<&str> {
        self.failures.iter().map(|f| f.image_id.as_str()).collect()
    }
}

/// Attempts every (image, model) pair with bounded parallelism, then
/// compacts the store. Failures are reported, never raised.
pub fn collect_all(
    records: &[ImageRecord],
    endpoints: &BTreeMap<String, Box<dyn ChatEndpoint>>,
    store: &DescriptionStore,
    config: &CollectorConfig,
    clock: &dyn Clock,
) -> Result<CollectionSummary, CollectError> {
    let limiters: BTreeMap<&str, RateLimiter> = match config.requests_per_minute {
        Some(rpm) => endpoints.keys().map(|m| (m.as_str(), RateLimiter::per_minute(rpm))).collect(),
        None => BTreeMap::new(),
    };
    let jobs: Vec<(&str, &dyn ChatEndpoint, &ImageRecord)> = endpoints
        .iter()
        .flat_map(|(m, e)| records.iter().map(move |r| (m.as_str(), e.as_ref(), r)))
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<Outcome, CollectError>)>> = Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = config.concurrency.max(1).min(jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(model_id, endpoint, image)) = jobs.get(i) else {
                    break;
                };
                let limiter = limiters.get(model_id);
                let r = collect_one(image, model_id, endpoint, store, config, clock, limiter).map(|(_, o)| o);
                results.lock().unwrap().push((i, r));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);

    let mut summary = CollectionSummary::default();
    for (i, r) in results {
        match r {
            Ok(Outcome::Cached) => summary.cached += 1,
            Ok(Outcome::Collected) => summary.completed += 1,
            Err(e @ CollectError::Store { .. }) => return Err(e),
            Err(e) => {
                let (model_id, _, image) = jobs[i];
                log::error!("{e}");
                summary.failures.push(Failure {
                    image_id: image.image_id.clone(),
                    model_id: model_id.to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    summary.failed = summary.failures.len();
    store.compact()?;
    Ok(summary)
}
