//! Pipeline configuration: command-line flags layered over an optional JSON
//! config file layered over defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, ValueEnum};
use doc2tool_core::compiler::MethodPolicy;
use doc2tool_core::executor::{UpstreamRewrite, DEFAULT_COURTESY_DELAY, DEFAULT_TIMEOUT};
use doc2tool_core::paramkb::KB_FILE;
use doc2tool_core::pipeline::GenerationMode;
use doc2tool_core::refiner::DEFAULT_MAX_ROUNDS;
use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_OUT: &str = "out";
pub const DEFAULT_JOBS: usize = 4;
pub const DEFAULT_BIND: &str = "127.0.0.1:8742";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {reason}")]
    File { path: String, reason: String },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("missing {0}")]
    Missing(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmBackend {
    #[default]
    Live,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingBackend {
    Live,
    #[default]
    Hashing,
}

/// Who labels non-error responses during validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    /// The LLM judge (default with the live backend).
    Oracle,
    /// Status-code and body heuristics (default with the scripted backend).
    Rule,
}

/// Every setting as an optional layer. Flags and the config file share this
/// shape; unset fields fall through to the next layer.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// Documentation directory (pages, or a urls.txt list of origins)
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output directory for stage artifacts [default: out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker pool size [default: 4]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Comma-separated HTTP methods tools may use [default: GET]
    #[arg(long, global = true)]
    pub allow_methods: Option<String>,
    /// Refinement round budget [default: 3]
    #[arg(long, global = true)]
    pub max_rounds: Option<u32>,
    /// Per-request timeout in seconds [default: 50]
    #[arg(long, global = true)]
    pub timeout_secs: Option<u64>,
    /// Delay between requests to the same host, in milliseconds [default: 200]
    #[arg(long, global = true)]
    pub courtesy_ms: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub llm_backend: Option<LlmBackend>,
    #[arg(long, global = true, value_enum)]
    pub embedding_backend: Option<EmbeddingBackend>,
    /// Directory of recorded oracle answers for the scripted backend
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub judge: Option<JudgeKind>,
    /// Parameter knowledge base file [default: <out>/paramkb.jsonl]
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    /// Tool generation mode: direct, targeted or both [default: direct]
    #[arg(long, global = true)]
    pub mode: Option<GenerationMode>,
    /// Seed for sampled inference [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Listen address for `serve` [default: 127.0.0.1:8742]
    #[arg(long, global = true)]
    pub bind: Option<String>,
    /// Send requests for URLs starting with FROM to TO instead (FROM=TO)
    #[arg(long = "rewrite", global = true, value_name = "FROM=TO")]
    pub rewrite: Vec<String>,
}

impl Options {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let err = |reason: String| ConfigError::File { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    /// Fields set here win over `lower`.
    pub fn over(self, lower: Options) -> Options {
        Options {
            input: self.input.or(lower.input),
            out: self.out.or(lower.out),
            jobs: self.jobs.or(lower.jobs),
            allow_methods: self.allow_methods.or(lower.allow_methods),
            max_rounds: self.max_rounds.or(lower.max_rounds),
            timeout_secs: self.timeout_secs.or(lower.timeout_secs),
            courtesy_ms: self.courtesy_ms.or(lower.courtesy_ms),
            llm_backend: self.llm_backend.or(lower.llm_backend),
            embedding_backend: self.embedding_backend.or(lower.embedding_backend),
            fixtures: self.fixtures.or(lower.fixtures),
            judge: self.judge.or(lower.judge),
            kb: self.kb.or(lower.kb),
            mode: self.mode.or(lower.mode),
            seed: self.seed.or(lower.seed),
            bind: self.bind.or(lower.bind),
            rewrite: if self.rewrite.is_empty() { lower.rewrite } else { self.rewrite },
        }
    }
}

/// Resolved configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: usize,
    pub policy: MethodPolicy,
    pub max_rounds: u32,
    pub timeout: Duration,
    pub courtesy_delay: Duration,
    pub llm_backend: LlmBackend,
    pub embedding_backend: EmbeddingBackend,
    pub fixtures: Option<PathBuf>,
    pub judge: JudgeKind,
    pub kb: PathBuf,
    pub mode: GenerationMode,
    pub seed: u64,
    pub bind: String,
    pub rewrites: Vec<UpstreamRewrite>,
}

pub fn parse_rewrite(s: &str) -> Result<UpstreamRewrite, ConfigError> {
    match s.split_once('=') {
        Some((from, to)) if !from.is_empty() && !to.is_empty() => Ok(UpstreamRewrite { from: from.into(), to: to.into() }),
        _ => Err(ConfigError::Invalid { field: "rewrite", reason: format!("expected FROM=TO, got {s:?}") }),
    }
}

impl PipelineConfig {
    pub fn resolve(o: Options) -> Result<Self, ConfigError> {
        let jobs = o.jobs.unwrap_or(DEFAULT_JOBS);
        if jobs == 0 {
            return Err(ConfigError::Invalid { field: "jobs", reason: "must be at least 1".into() });
        }
        let policy = match &o.allow_methods {
            Some(list) => MethodPolicy::parse(list).map_err(|e| ConfigError::Invalid { field: "allow-methods", reason: e.to_string() })?,
            None => MethodPolicy::default(),
        };
        let timeout = o.timeout_secs.map(Duration::from_secs).unwrap_or(DEFAULT_TIMEOUT);
        if timeout.is_zero() {
            return Err(ConfigError::Invalid { field: "timeout-secs", reason: "must be positive".into() });
        }
        let llm_backend = o.llm_backend.unwrap_or_default();
        if llm_backend == LlmBackend::Scripted && o.fixtures.is_none() {
            return Err(ConfigError::Missing("--fixtures (required by the scripted backend)"));
        }
        let judge = o.judge.unwrap_or(match llm_backend {
            LlmBackend::Live => JudgeKind::Oracle,
            LlmBackend::Scripted => JudgeKind::Rule,
        });
        let out = o.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Ok(Self {
            input: o.input,
            kb: o.kb.unwrap_or_else(|| out.join(KB_FILE)),
            out,
            jobs,
            policy,
            max_rounds: o.max_rounds.unwrap_or(DEFAULT_MAX_ROUNDS),
            timeout,
            courtesy_delay: o.courtesy_ms.map(Duration::from_millis).unwrap_or(DEFAULT_COURTESY_DELAY),
            llm_backend,
            embedding_backend: o.embedding_backend.unwrap_or_default(),
            fixtures: o.fixtures,
            judge,
            mode: o.mode.unwrap_or_default(),
            seed: o.seed.unwrap_or(0),
            bind: o.bind.unwrap_or_else(|| DEFAULT_BIND.into()),
            rewrites: o.rewrite.iter().map(|s| parse_rewrite(s)).collect::<Result<_, _>>()?,
        })
    }
}
