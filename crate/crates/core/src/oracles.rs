//! Gateway to the text-generation and embedding models.
//!
//! Every model call in the pipeline goes through [`OracleGateway`]. Two
//! completion backends exist: [`LiveBackend`] talks to an OpenAI-compatible
//! chat-completions endpoint, [`ScriptedBackend`] replays fixtures keyed by
//! `(task_kind, sha256(canonical prompt))` so tests run offline and detect
//! prompt drift. Embeddings come from either [`HashingEmbedder`] (character
//! trigrams hashed into 256 buckets) or [`LiveEmbedder`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;

pub const ENV_API_KEY: &str = "DOC2TOOL_LLM_API_KEY";
pub const ENV_BASE_URL: &str = "DOC2TOOL_LLM_BASE_URL";
pub const ENV_MODEL: &str = "DOC2TOOL_LLM_MODEL";

const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
const DEFAULT_MODEL: &str = "gpt-4o";
const DEFAULT_EMBED_MODEL: &str = "text-embedding-3-small";

/// Dimension of the deterministic hashing embedder.
pub const HASH_DIMS: usize = 256;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("missing credential: set {0}")]
    MissingCredential(&'static str),
    #[error("model backend unavailable after {attempts} attempts: {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("no scripted fixture for {task_kind} prompt {digest}")]
    ScriptedFixtureMissing { task_kind: TaskKind, digest: String },
    #[error("text to embed is empty")]
    EmptyText,
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("malformed model response: {0}")]
    MalformedResponse(String),
    #[error("fixture io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = OracleError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Extract,
    Judge,
    Refine,
    Fingerprint,
    ParamGuess,
    DocQuality,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] =
        [TaskKind::Extract, TaskKind::Judge, TaskKind::Refine, TaskKind::Fingerprint, TaskKind::ParamGuess, TaskKind::DocQuality];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Extract => "extract",
            TaskKind::Judge => "judge",
            TaskKind::Refine => "refine",
            TaskKind::Fingerprint => "fingerprint",
            TaskKind::ParamGuess => "param_guess",
            TaskKind::DocQuality => "doc_quality",
        }
    }

    pub fn parse(s: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single model request. When `response_schema` is set the backend is
/// asked for JSON conforming to it and the answer comes back structured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub task_kind: TaskKind,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_schema: Option<Value>,
}

impl OracleRequest {
    pub fn new(task_kind: TaskKind, prompt: impl Into<String>) -> Result<Self> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(OracleError::EmptyPrompt);
        }
        Ok(Self { task_kind, prompt, response_schema: None })
    }

    pub fn with_schema(mut self, schema: Value) -> Self {
        self.response_schema = Some(schema);
        self
    }

    pub fn digest(&self) -> String {
        prompt_digest(&self.prompt)
    }
}

/// Model output: either parsed JSON (structured mode) or free text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum Completion {
    Structured(Value),
    Text(String),
}

impl Completion {
    /// Structured value, parsing text output as JSON if needed.
    pub fn into_json(self) -> Result<Value> {
        match self {
            Completion::Structured(v) => Ok(v),
            Completion::Text(t) => {
                let trimmed = strip_code_fence(&t);
                serde_json::from_str(trimmed).map_err(|e| OracleError::MalformedResponse(format!("expected JSON: {e}")))
            }
        }
    }

    pub fn into_text(self) -> String {
        match self {
            Completion::Text(t) => t,
            Completion::Structured(Value::String(s)) => s,
            Completion::Structured(v) => v.to_string(),
        }
    }
}

fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map(|(_, r)| r).unwrap_or("");
        return rest.trim_end().strip_suffix("```").unwrap_or(rest).trim();
    }
    t
}

/// Canonical form of a prompt: LF line endings, no trailing whitespace per
/// line, no leading or trailing blank lines.
pub fn canonicalize_prompt(prompt: &str) -> String {
    let normalized = prompt.replace("\r\n", "\n").replace('\r', "\n");
    let lines: Vec<&str> = normalized.lines().map(str::trim_end).collect();
    lines.join("\n").trim_matches('\n').to_string()
}

/// Hex SHA-256 of the canonical prompt.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(canonicalize_prompt(prompt).as_bytes()))
}

#[async_trait]
pub trait CompletionBackend: Send + Sync {
    async fn complete(&self, request: &OracleRequest) -> Result<Completion>;

    /// Live backends are subject to the gateway's in-flight cap.
    fn is_live(&self) -> bool {
        false
    }
}

#[async_trait]
pub trait Embedder: Send + Sync {
    async fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

// ---------------------------------------------------------------------------
// Embeddings

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let v = Self { values };
        (v.norm() > 0.0).then_some(v)
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; 0.0 when dimensions differ.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        if self.dims() != other.dims() {
            return 0.0;
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        dot / (self.norm() * other.norm())
    }
}

/// Offline embedder: lowercase the text, pad with one space on each side,
/// hash every character trigram with 64-bit FNV-1a into one of 256 buckets,
/// then L2-normalize the bucket counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashingEmbedder;

impl HashingEmbedder {
    pub fn embed_sync(&self, text: &str) -> Result<EmbeddingVector> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(OracleError::EmptyText);
        }
        let padded: Vec<char> = std::iter::once(' ').chain(trimmed.to_lowercase().chars()).chain(std::iter::once(' ')).collect();
        let mut buckets = vec![0.0f64; HASH_DIMS];
        let mut buf = [0u8; 12];
        for window in padded.windows(3) {
            let mut len = 0;
            for c in window {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let idx = (fnv1a64(&buf[..len]) % HASH_DIMS as u64) as usize;
            buckets[idx] += 1.0;
        }
        let norm = buckets.iter().map(|v| v * v).sum::<f64>().sqrt();
        for b in &mut buckets {
            *b /= norm;
        }
        Ok(EmbeddingVector { values: buckets })
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[async_trait]
impl Embedder for HashingEmbedder {
    async fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        self.embed_sync(text)
    }
}

// ---------------------------------------------------------------------------
// Scripted backend

/// On-disk fixture: `{task_kind}/{prompt_digest}.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedFixture {
    pub task_kind: TaskKind,
    pub prompt_digest: String,
    pub completion: Completion,
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    fixtures: BTreeMap<(TaskKind, String), Completion>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task_kind: TaskKind, prompt: &str, completion: Completion) {
        self.fixtures.insert((task_kind, prompt_digest(prompt)), completion);
    }

    pub fn insert_digest(&mut self, task_kind: TaskKind, digest: String, completion: Completion) {
        self.fixtures.insert((task_kind, digest), completion);
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    pub fn fixtures(&self) -> impl Iterator<Item = ScriptedFixture> + '_ {
        self.fixtures.iter().map(|((k, d), c)| ScriptedFixture { task_kind: *k, prompt_digest: d.clone(), completion: c.clone() })
    }

    pub fn merge(&mut self, other: ScriptedBackend) {
        self.fixtures.extend(other.fixtures);
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut backend = Self::new();
        for kind in TaskKind::ALL {
            let sub = dir.join(kind.as_str());
            if !sub.is_dir() {
                continue;
            }
            let mut paths: Vec<_> =
                std::fs::read_dir(&sub)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|e| e == "json")).collect();
            paths.sort();
            for path in paths {
                let raw = std::fs::read_to_string(&path)?;
                let fixture: ScriptedFixture =
                    serde_json::from_str(&raw).map_err(|e| OracleError::MalformedResponse(format!("{}: {e}", path.display())))?;
                backend.insert_digest(fixture.task_kind, fixture.prompt_digest, fixture.completion);
            }
        }
        Ok(backend)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        for fixture in self.fixtures() {
            let sub = dir.join(fixture.task_kind.as_str());
            std::fs::create_dir_all(&sub)?;
            let body = serde_json::to_string_pretty(&fixture).map_err(|e| OracleError::MalformedResponse(e.to_string()))?;
            std::fs::write(sub.join(format!("{}.json", fixture.prompt_digest)), body + "\n")?;
        }
        Ok(())
    }
}

#[async_trait]
impl CompletionBackend for ScriptedBackend {
    async fn complete(&self, request: &OracleRequest) -> Result<Completion> {
        let digest = request.digest();
        self.fixtures
            .get(&(request.task_kind, digest.clone()))
            .cloned()
            .ok_or(OracleError::ScriptedFixtureMissing { task_kind: request.task_kind, digest })
    }
}

// ---------------------------------------------------------------------------
// Live backend

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
}

impl LiveConfig {
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let api_key = lookup(ENV_API_KEY).filter(|k| !k.trim().is_empty()).ok_or(OracleError::MissingCredential(ENV_API_KEY))?;
        Ok(Self {
            base_url: lookup(ENV_BASE_URL).unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
            api_key,
            model: lookup(ENV_MODEL).unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
            request_timeout: Duration::from_secs(120),
        })
    }
}

/// OpenAI-compatible chat-completions client.
pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::Client,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self> {
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| OracleError::BackendUnavailable { attempts: 0, message: e.to_string() })?;
        Ok(Self { config, client })
    }

    pub fn from_env() -> Result<Self> {
        Self::new(LiveConfig::from_env()?)
    }

    fn endpoint(&self, suffix: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), suffix)
    }
}

/// Outcome of one HTTP attempt against the model host.
enum AttemptError {
    Transient(String),
    Fatal(String),
}

async fn post_with_retry(client: &reqwest::Client, config: &LiveConfig, url: &str, body: &Value) -> Result<Value> {
    let mut backoff = config.initial_backoff;
    let mut last = String::new();
    for attempt in 1..=config.attempts {
        let outcome = async {
            let resp = client.post(url).bearer_auth(&config.api_key).json(body).send().await.map_err(|e| AttemptError::Transient(e.to_string()))?;
            let status = resp.status();
            let text = resp.text().await.map_err(|e| AttemptError::Transient(e.to_string()))?;
            if status.is_server_error() || status.as_u16() == 429 {
                return Err(AttemptError::Transient(format!("{status}: {text}")));
            }
            if !status.is_success() {
                return Err(AttemptError::Fatal(format!("{status}: {text}")));
            }
            serde_json::from_str::<Value>(&text).map_err(|e| AttemptError::Fatal(e.to_string()))
        }
        .await;
        match outcome {
            Ok(v) => return Ok(v),
            Err(AttemptError::Fatal(m)) => return Err(OracleError::BackendUnavailable { attempts: attempt, message: m }),
            Err(AttemptError::Transient(m)) => {
                tracing::warn!(attempt, error = %m, "model request failed");
                last = m;
                if attempt < config.attempts {
                    tokio::time::sleep(backoff).await;
                    backoff *= 2;
                }
            }
        }
    }
    Err(OracleError::BackendUnavailable { attempts: config.attempts, message: last })
}

#[async_trait]
impl CompletionBackend for LiveBackend {
    async fn complete(&self, request: &OracleRequest) -> Result<Completion> {
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": 0,
        });
        if let Some(schema) = &request.response_schema {
            body["response_format"] = serde_json::json!({
                "type": "json_schema",
                "json_schema": {"name": request.task_kind.as_str(), "schema": schema},
            });
        }
        let resp = post_with_retry(&self.client, &self.config, &self.endpoint("chat/completions"), &body).await?;
        let content = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| OracleError::MalformedResponse("no message content".into()))?;
        if request.response_schema.is_some() {
            Completion::Text(content.to_string()).into_json().map(Completion::Structured)
        } else {
            Ok(Completion::Text(content.to_string()))
        }
    }

    fn is_live(&self) -> bool {
        true
    }
}

/// OpenAI-compatible embeddings client.
pub struct LiveEmbedder {
    config: LiveConfig,
    client: reqwest::Client,
    model: String,
}

impl LiveEmbedder {
    pub fn new(config: LiveConfig, model: Option<String>) -> Result<Self> {
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| OracleError::BackendUnavailable { attempts: 0, message: e.to_string() })?;
        Ok(Self { config, client, model: model.unwrap_or_else(|| DEFAULT_EMBED_MODEL.into()) })
    }
}

#[async_trait]
impl Embedder for LiveEmbedder {
    async fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(OracleError::EmptyText);
        }
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::json!({"model": self.model, "input": text});
        let resp = post_with_retry(&self.client, &self.config, &url, &body).await?;
        let values: Vec<f64> = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| OracleError::MalformedResponse("no embedding".into()))?
            .iter()
            .filter_map(Value::as_f64)
            .collect();
        EmbeddingVector::new(values).ok_or_else(|| OracleError::MalformedResponse("degenerate embedding".into()))
    }
}

// ---------------------------------------------------------------------------
// Gateway

/// Default cap on concurrent live model requests.
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Clone)]
pub struct OracleGateway {
    default: Arc<dyn CompletionBackend>,
    overrides: HashMap<TaskKind, Arc<dyn CompletionBackend>>,
    embedder: Arc<dyn Embedder>,
    in_flight: Arc<Semaphore>,
}

impl fmt::Debug for OracleGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleGateway").field("overrides", &self.overrides.keys().collect::<Vec<_>>()).finish_non_exhaustive()
    }
}

impl OracleGateway {
    pub fn new(default: Arc<dyn CompletionBackend>, embedder: Arc<dyn Embedder>) -> Self {
        Self { default, overrides: HashMap::new(), embedder, in_flight: Arc::new(Semaphore::new(DEFAULT_IN_FLIGHT)) }
    }

    /// Scripted completions with the hashing embedder.
    pub fn scripted(backend: ScriptedBackend) -> Self {
        Self::new(Arc::new(backend), Arc::new(HashingEmbedder))
    }

    pub fn with_override(mut self, kind: TaskKind, backend: Arc<dyn CompletionBackend>) -> Self {
        self.overrides.insert(kind, backend);
        self
    }

    pub fn with_in_flight_cap(mut self, cap: usize) -> Self {
        self.in_flight = Arc::new(Semaphore::new(cap.max(1)));
        self
    }

    pub async fn complete(&self, request: &OracleRequest) -> Result<Completion> {
        let backend = self.overrides.get(&request.task_kind).unwrap_or(&self.default);
        if backend.is_live() {
            let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
            backend.complete(request).await
        } else {
            backend.complete(request).await
        }
    }

    pub async fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(OracleError::EmptyText);
        }
        self.embedder.embed(text).await
    }
}
