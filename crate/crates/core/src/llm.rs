//! Model transport: chat completions and embeddings over the OpenAI-style
//! wire protocol, with a content-addressed record/replay archive.
//!
//! Every model interaction in the crate goes through [`ChatModel`] or
//! [`EmbeddingProvider`]. [`LlmClient`] is the production implementation;
//! [`ScriptedModel`] and [`HashEmbedder`] are deterministic stand-ins.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::hashing::sha256_hex;
use crate::metrics::Embedding;
use crate::scalar::Scalar;

pub mod stub;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Extract,
    Group,
    Instantiate,
    Embed,
}

impl Role {
    pub fn default_temperature(self) -> f64 {
        match self {
            Role::Extract => 0.2,
            Role::Group | Role::Instantiate => 0.8,
            Role::Embed => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Extract => "extract",
            Role::Group => "group",
            Role::Instantiate => "instantiate",
            Role::Embed => "embed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ModelParams {
    pub fn for_role(role: Role) -> Self {
        ModelParams {
            model: String::new(),
            temperature: role.default_temperature(),
            max_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub role: Role,
    pub system: Option<String>,
    pub prompt: String,
    pub params: ModelParams,
    /// Retry index; part of the request identity so a retry is a new request.
    pub attempt: u32,
    /// Free-form tag for logs. Not hashed.
    pub request_id: String,
}

#[derive(Serialize)]
struct HashedRequest<'a> {
    role: Role,
    system: Option<&'a str>,
    prompt: &'a str,
    model: &'a str,
    temperature: f64,
    max_tokens: u32,
    attempt: u32,
}

impl ModelRequest {
    pub fn new(role: Role, prompt: impl Into<String>) -> Self {
        ModelRequest {
            role,
            system: None,
            prompt: prompt.into(),
            params: ModelParams::for_role(role),
            attempt: 0,
            request_id: String::new(),
        }
    }

    /// Content hash over role, prompts, parameters and attempt.
    pub fn hash(&self) -> String {
        let h = HashedRequest {
            role: self.role,
            system: self.system.as_deref(),
            prompt: &self.prompt,
            model: &self.params.model,
            temperature: self.params.temperature,
            max_tokens: self.params.max_tokens,
            attempt: self.attempt,
        };
        sha256_hex(serde_json::to_string(&h).expect("request serializes").as_bytes())
    }
}

fn embed_hash(model: &str, texts: &[String]) -> String {
    let v = json!({ "role": Role::Embed, "model": model, "texts": texts });
    sha256_hex(v.to_string().as_bytes())
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("http error{}: {message}", status.map(|s| format!(" {s}")).unwrap_or_default())]
    Http { status: Option<u16>, message: String },
    #[error("malformed response body: {0}")]
    Malformed(String),
    #[error("replay archive has no entry for request {hash}")]
    ReplayMiss { hash: String },
    #[error("no endpoint configured for role {0:?}")]
    NotConfigured(Role),
    #[error("archive i/o: {0}")]
    Archive(#[from] io::Error),
    #[error("scripted model exhausted")]
    ScriptExhausted,
}

impl ModelError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ModelError::Http { .. } | ModelError::Malformed(_))
    }
}

pub trait ChatModel {
    fn chat(&self, req: &ModelRequest) -> Result<String, ModelError>;
}

impl<M: ChatModel + ?Sized> ChatModel for &M {
    fn chat(&self, req: &ModelRequest) -> Result<String, ModelError> {
        (**self).chat(req)
    }
}

impl<M: ChatModel + ?Sized> ChatModel for Box<M> {
    fn chat(&self, req: &ModelRequest) -> Result<String, ModelError> {
        (**self).chat(req)
    }
}

pub trait EmbeddingProvider<T: Scalar> {
    /// One vector per text, in input order, all of the same dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding<T>>, ModelError>;
}

/// Returns canned responses in order, recording the requests it saw.
#[derive(Debug, Default)]
pub struct ScriptedModel {
    responses: Mutex<VecDeque<Result<String, ModelError>>>,
    seen: Mutex<Vec<ModelRequest>>,
}

impl ScriptedModel {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedModel {
            responses: Mutex::new(responses.into_iter().map(|s| Ok(s.into())).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn push(&self, r: Result<String, ModelError>) {
        self.responses.lock().unwrap().push_back(r);
    }

    pub fn requests(&self) -> Vec<ModelRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().unwrap().len()
    }
}

impl ChatModel for ScriptedModel {
    fn chat(&self, req: &ModelRequest) -> Result<String, ModelError> {
        self.seen.lock().unwrap().push(req.clone());
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or(Err(ModelError::ScriptExhausted))
    }
}

/// Deterministic text-to-vector provider: each dimension is drawn from a
/// SHA-256 stream over (seed, text, block). Same text, same vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim, seed }
    }

    pub fn embed_one<T: Scalar>(&self, text: &str) -> Embedding<T> {
        let mut values = Vec::with_capacity(self.dim);
        let mut block = 0u32;
        while values.len() < self.dim {
            let digest = sha256_hex(format!("{}\u{0}{}\u{0}{}", self.seed, block, text).as_bytes());
            let bytes = hex::decode(digest).expect("hex digest");
            for chunk in bytes.chunks(4) {
                if values.len() == self.dim {
                    break;
                }
                let u = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                // map to [-1, 1)
                let v = (u as f64 / u32::MAX as f64) * 2.0 - 1.0;
                values.push(T::from_f64_lossy(v));
            }
            block += 1;
        }
        // An all-zero vector is practically impossible but would be invalid.
        if values.iter().all(|v| v.is_zero()) {
            values[0] = T::one();
        }
        Embedding::new(values).expect("finite, non-empty")
    }
}

impl<T: Scalar> EmbeddingProvider<T> for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding<T>>, ModelError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientMode {
    #[default]
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    /// Base URL up to and including the API version, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub requests_per_second: Option<f64>,
}

fn default_max_tokens() -> u32 {
    2048
}

impl Endpoint {
    pub fn params(&self, role: Role) -> ModelParams {
        ModelParams {
            model: self.model.clone(),
            temperature: self.temperature.unwrap_or(role.default_temperature()),
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ArchivedResponse {
    Chat { text: String },
    Embed { vectors: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArchiveRecord {
    hash: String,
    role: Role,
    #[serde(flatten)]
    response: ArchivedResponse,
}

/// Content-addressed store of model responses, one JSON record per line.
#[derive(Debug, Default)]
pub struct Archive {
    path: Option<PathBuf>,
    entries: HashMap<String, ArchivedResponse>,
}

impl Archive {
    pub fn in_memory() -> Self {
        Archive::default()
    }

    /// Open (or create on first write) an archive file.
    pub fn open(path: &Path) -> io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ArchiveRecord = serde_json::from_str(&line).map_err(|e| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("archive line {}: {e}", i + 1))
                })?;
                entries.insert(rec.hash, rec.response);
            }
        }
        Ok(Archive {
            path: Some(path.to_path_buf()),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert_chat(&mut self, hash: &str, role: Role, text: &str) -> io::Result<()> {
        self.insert(hash, role, ArchivedResponse::Chat { text: text.to_string() })
    }

    fn insert(&mut self, hash: &str, role: Role, response: ArchivedResponse) -> io::Result<()> {
        if self.entries.contains_key(hash) {
            return Ok(());
        }
        if let Some(path) = &self.path {
            let rec = ArchiveRecord {
                hash: hash.to_string(),
                role,
                response: response.clone(),
            };
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_string(&rec).map_err(io::Error::from)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        self.entries.insert(hash.to_string(), response);
        Ok(())
    }

    pub fn chat(&self, hash: &str) -> Option<&str> {
        match self.entries.get(hash) {
            Some(ArchivedResponse::Chat { text }) => Some(text),
            _ => None,
        }
    }

    fn vectors(&self, hash: &str) -> Option<&Vec<Vec<f64>>> {
        match self.entries.get(hash) {
            Some(ArchivedResponse::Embed { vectors }) => Some(vectors),
            _ => None,
        }
    }
}

#[derive(Debug)]
struct TokenBucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        TokenBucket {
            rate,
            capacity,
            tokens: capacity,
            last: Instant::now(),
        }
    }

    /// Take one token, or report how long to wait for the next one.
    fn try_take(&mut self) -> Result<(), Duration> {
        let now = Instant::now();
        let elapsed = now.duration_since(self.last).as_secs_f64();
        self.tokens = (self.tokens + elapsed * self.rate).min(self.capacity);
        self.last = now;
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - self.tokens) / self.rate))
        }
    }
}

/// Retry policy for live calls.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 2,
            backoff: Duration::from_millis(500),
        }
    }
}

/// Production model client. Shareable across threads.
pub struct LlmClient {
    mode: ClientMode,
    endpoints: HashMap<Role, Endpoint>,
    archive: Mutex<Archive>,
    limiters: Mutex<HashMap<Role, TokenBucket>>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl LlmClient {
    pub fn new(mode: ClientMode, endpoints: HashMap<Role, Endpoint>, archive: Archive) -> Self {
        let limiters = endpoints
            .iter()
            .filter_map(|(role, e)| e.requests_per_second.map(|r| (*role, TokenBucket::new(r))))
            .collect();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        LlmClient {
            mode,
            endpoints,
            archive: Mutex::new(archive),
            limiters: Mutex::new(limiters),
            retry: RetryPolicy::default(),
            agent,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> ClientMode {
        self.mode
    }

    pub fn endpoint(&self, role: Role) -> Option<&Endpoint> {
        self.endpoints.get(&role)
    }

    /// Parameters a request for `role` should carry.
    pub fn params(&self, role: Role) -> ModelParams {
        self.endpoints
            .get(&role)
            .map(|e| e.params(role))
            .unwrap_or_else(|| ModelParams::for_role(role))
    }

    pub fn archive_len(&self) -> usize {
        self.archive.lock().unwrap().len()
    }

    fn throttle(&self, role: Role) {
        loop {
            let wait = {
                let mut limiters = self.limiters.lock().unwrap();
                match limiters.get_mut(&role) {
                    None => return,
                    Some(b) => match b.try_take() {
                        Ok(()) => return,
                        Err(d) => d,
                    },
                }
            };
            std::thread::sleep(wait);
        }
    }

    fn with_retries<T>(
        &self,
        role: Role,
        mut call: impl FnMut() -> Result<T, ModelError>,
    ) -> Result<T, ModelError> {
        let mut attempt = 0;
        loop {
            self.throttle(role);
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.retry.retries => {
                    log::warn!("{} request failed ({e}); retrying", role.as_str());
                    std::thread::sleep(self.retry.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn post(&self, endpoint: &Endpoint, path: &str, body: &Value) -> Result<Value, ModelError> {
        let url = format!("{}/{}", endpoint.base_url.trim_end_matches('/'), path);
        let mut req = self.agent.post(&url);
        if let Some(var) = &endpoint.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(s) => ModelError::Http {
                status: Some(s),
                message: format!("POST {url}"),
            },
            other => ModelError::Http {
                status: None,
                message: other.to_string(),
            },
        })?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| ModelError::Malformed(e.to_string()))
    }

    fn live_chat(&self, req: &ModelRequest) -> Result<String, ModelError> {
        let endpoint = self.endpoints.get(&req.role).ok_or(ModelError::NotConfigured(req.role))?;
        let mut messages = Vec::new();
        if let Some(system) = &req.system {
            messages.push(json!({ "role": "system", "content": system }));
        }
        messages.push(json!({ "role": "user", "content": req.prompt }));
        let body = json!({
            "model": req.params.model,
            "messages": messages,
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_tokens,
        });
        self.with_retries(req.role, || {
            let v = self.post(endpoint, "chat/completions", &body)?;
            parse_chat_response(&v)
        })
    }

    fn live_embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ModelError> {
        let endpoint = self.endpoints.get(&Role::Embed).ok_or(ModelError::NotConfigured(Role::Embed))?;
        let body = json!({ "model": endpoint.model, "input": texts });
        self.with_retries(Role::Embed, || {
            let v = self.post(endpoint, "embeddings", &body)?;
            parse_embedding_response(&v, texts.len())
        })
    }
}

/// First choice's message content.
pub fn parse_chat_response(v: &Value) -> Result<String, ModelError> {
    v.get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ModelError::Malformed("missing choices[0].message.content".into()))
}

/// `data[*].embedding`, reordered by `index`, checked for count and dimension.
pub fn parse_embedding_response(v: &Value, expected: usize) -> Result<Vec<Vec<f64>>, ModelError> {
    let data = v
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::Malformed("missing data array".into()))?;
    let mut rows: Vec<(u64, Vec<f64>)> = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
        let vec = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ModelError::Malformed(format!("data[{pos}] has no embedding")))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| ModelError::Malformed("non-numeric embedding".into())))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((index, vec));
    }
    rows.sort_by_key(|(i, _)| *i);
    if rows.len() != expected {
        return Err(ModelError::Malformed(format!(
            "expected {expected} embeddings, got {}",
            rows.len()
        )));
    }
    let dim = rows.first().map(|(_, v)| v.len()).unwrap_or(0);
    if rows.iter().any(|(_, v)| v.len() != dim || v.is_empty()) {
        return Err(ModelError::Malformed("embeddings disagree on dimension".into()));
    }
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

impl ChatModel for LlmClient {
    fn chat(&self, req: &ModelRequest) -> Result<String, ModelError> {
        let hash = req.hash();
        match self.mode {
            ClientMode::Replay => self
                .archive
                .lock()
                .unwrap()
                .chat(&hash)
                .map(str::to_string)
                .ok_or(ModelError::ReplayMiss { hash }),
            ClientMode::Live => self.live_chat(req),
            ClientMode::Record => {
                if let Some(text) = self.archive.lock().unwrap().chat(&hash) {
                    return Ok(text.to_string());
                }
                let text = self.live_chat(req)?;
                self.archive.lock().unwrap().insert_chat(&hash, req.role, &text)?;
                Ok(text)
            }
        }
    }
}

impl<T: Scalar> EmbeddingProvider<T> for LlmClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding<T>>, ModelError> {
        let model = self.endpoints.get(&Role::Embed).map(|e| e.model.as_str()).unwrap_or("");
        let hash = embed_hash(model, texts);
        let raw = match self.mode {
            ClientMode::Replay => self
                .archive
                .lock()
                .unwrap()
                .vectors(&hash)
                .cloned()
                .ok_or(ModelError::ReplayMiss { hash })?,
            ClientMode::Live => self.live_embed(texts)?,
            ClientMode::Record => {
                let cached = self.archive.lock().unwrap().vectors(&hash).cloned();
                match cached {
                    Some(v) => v,
                    None => {
                        let v = self.live_embed(texts)?;
                        self.archive.lock().unwrap().insert(
                            &hash,
                            Role::Embed,
                            ArchivedResponse::Embed { vectors: v.clone() },
                        )?;
                        v
                    }
                }
            }
        };
        raw.into_iter()
            .map(|row| {
                Embedding::new(row.into_iter().map(T::from_f64_lossy).collect())
                    .map_err(|e| ModelError::Malformed(e.to_string()))
            })
            .collect()
    }
}
