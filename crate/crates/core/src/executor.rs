//! Parameter binding and HTTP invocation.
//!
//! An [`InvocationRecord`] mirrors the capture object printed by emitted tool
//! sources (`status_code`, `text`, `json`, `content`) plus `x_`-prefixed
//! extension keys.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::compiler::{canonical_scalar, encode_path_value, HttpMethod, MethodPolicy, ToolSpec};
use crate::docingest::url_origin;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(50);
pub const DEFAULT_COURTESY_DELAY: Duration = Duration::from_millis(200);
pub const MAX_BODY_BYTES: usize = 1024 * 1024;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("method {method} is not allowed (allow-list: {allowed})")]
    MethodDisallowed { method: HttpMethod, allowed: String },
    #[error("missing required parameters: {}", .0.join(", "))]
    NotInvocable(Vec<String>),
    #[error("cannot build http client: {0}")]
    Client(String),
}

/// Values bound to a tool, with defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBinding {
    pub values: BTreeMap<String, String>,
    pub unbound_required: Vec<String>,
    /// URL after substitution and query encoding; absent until invocable.
    pub request_url: Option<String>,
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    /// Non-path parameters, in wire order.
    #[serde(default)]
    pub query: Vec<(String, String)>,
}

impl ParamBinding {
    pub fn is_invocable(&self) -> bool {
        self.unbound_required.is_empty()
    }
}

pub fn bind_params(tool: &ToolSpec, values: &BTreeMap<String, Value>) -> ParamBinding {
    let strings: BTreeMap<String, String> = values.iter().filter_map(|(k, v)| canonical_scalar(v).map(|s| (k.clone(), s))).collect();
    bind_strings(tool, &strings)
}

pub fn bind_strings(tool: &ToolSpec, provided: &BTreeMap<String, String>) -> ParamBinding {
    let mut values = BTreeMap::new();
    let mut unbound_required = Vec::new();
    for p in tool.all_params() {
        match provided.get(&p.name).or(p.default.as_ref()) {
            Some(v) => {
                values.insert(p.name.clone(), v.clone());
            }
            None if p.required => unbound_required.push(p.name.clone()),
            None => {}
        }
    }
    let extras: Vec<(String, String)> = provided.iter().filter(|(k, _)| tool.param(k).is_none()).map(|(k, v)| (k.clone(), v.clone())).collect();
    for (k, v) in &extras {
        values.insert(k.clone(), v.clone());
    }

    let mut binding = ParamBinding { values, unbound_required, request_url: None, headers: Vec::new(), query: Vec::new() };
    if !binding.is_invocable() {
        return binding;
    }

    let mut url = tool.url_template.clone();
    for p in &tool.path_params {
        url = url.replace(&format!("{{{}}}", p.name), &encode_path_value(&binding.values[&p.name]));
    }
    if let Some(suffix) = &tool.optional_suffix {
        if let Some(v) = binding.values.get(&suffix.param.name) {
            if !v.is_empty() && Some(v) != suffix.param.default.as_ref() {
                url.push_str(&suffix.prefix);
                url.push_str(&encode_path_value(v));
            }
        }
    }
    for p in &tool.query_params {
        if let Some(v) = binding.values.get(&p.name) {
            binding.query.push((p.wire().to_string(), v.clone()));
        }
    }
    for (k, v) in &tool.fixed_query {
        binding.query.push((k.clone(), v.clone()));
    }
    binding.query.extend(extras);
    for p in &tool.header_params {
        if let Some(v) = binding.values.get(&p.name) {
            binding.headers.push((p.wire().to_string(), v.clone()));
        }
    }
    if !tool.method.has_body() && !binding.query.is_empty() {
        let encoded = url::form_urlencoded::Serializer::new(String::new()).extend_pairs(&binding.query).finish();
        url.push('?');
        url.push_str(&encoded);
    }
    binding.request_url = Some(url);
    binding
}

/// Capture of one HTTP call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub status_code: Option<u16>,
    pub text: String,
    pub json: Option<Value>,
    pub content: String,
    #[serde(rename = "x_error", default)]
    pub error: Option<String>,
    #[serde(rename = "x_request_url")]
    pub request_url: String,
    #[serde(rename = "x_started_at")]
    pub started_at: DateTime<Utc>,
    #[serde(rename = "x_elapsed_ms")]
    pub elapsed_ms: u64,
    #[serde(rename = "x_truncated", default)]
    pub truncated: bool,
}

impl InvocationRecord {
    /// The four keys shared with emitted tool sources.
    pub fn core(&self) -> Value {
        serde_json::json!({
            "status_code": self.status_code,
            "text": self.text,
            "json": self.json,
            "content": self.content,
        })
    }

    pub fn transport_failure(request_url: &str, started_at: DateTime<Utc>, elapsed_ms: u64, error: String) -> Self {
        Self {
            status_code: None,
            text: String::new(),
            json: None,
            content: String::new(),
            error: Some(error),
            request_url: request_url.to_string(),
            started_at,
            elapsed_ms,
            truncated: false,
        }
    }

    /// Build a record from raw response bytes.
    pub fn from_response(status: u16, body: &[u8], truncated: bool, request_url: &str, started_at: DateTime<Utc>, elapsed_ms: u64) -> Self {
        let content = String::from_utf8_lossy(body).into_owned();
        let json = serde_json::from_str::<Value>(&content).ok();
        Self {
            status_code: Some(status),
            text: content.clone(),
            json,
            content,
            error: None,
            request_url: request_url.to_string(),
            started_at,
            elapsed_ms,
            truncated,
        }
    }
}

/// Rewrites request URLs that start with `from` to start with `to`. Used to
/// point documented hosts at a local mock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpstreamRewrite {
    pub from: String,
    pub to: String,
}

pub fn apply_rewrites(url: &str, rewrites: &[UpstreamRewrite]) -> String {
    rewrites.iter().find_map(|r| url.strip_prefix(r.from.as_str()).map(|rest| format!("{}{}", r.to, rest))).unwrap_or_else(|| url.to_string())
}

#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    pub timeout: Duration,
    pub courtesy_delay: Duration,
    pub max_body_bytes: usize,
    pub policy: MethodPolicy,
    pub rewrites: Vec<UpstreamRewrite>,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            courtesy_delay: DEFAULT_COURTESY_DELAY,
            max_body_bytes: MAX_BODY_BYTES,
            policy: MethodPolicy::default(),
            rewrites: Vec::new(),
        }
    }
}

type HostSlot = Arc<tokio::sync::Mutex<Option<Instant>>>;

/// HTTP executor. Requests to the same host are serialized and spaced by the
/// courtesy delay.
pub struct Executor {
    config: ExecutorConfig,
    client: reqwest::Client,
    insecure_client: reqwest::Client,
    hosts: Mutex<HashMap<String, HostSlot>>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Executor {
    pub fn new(config: ExecutorConfig) -> Result<Self, ExecError> {
        let build = |insecure: bool| {
            reqwest::Client::builder()
                .timeout(config.timeout)
                .tls_danger_accept_invalid_certs(insecure)
                .build()
                .map_err(|e| ExecError::Client(e.to_string()))
        };
        Ok(Self { client: build(false)?, insecure_client: build(true)?, config, hosts: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    pub fn policy(&self) -> &MethodPolicy {
        &self.config.policy
    }

    fn host_slot(&self, url: &str) -> HostSlot {
        let key = url_origin(url).unwrap_or_default();
        self.hosts.lock().expect("host map poisoned").entry(key).or_default().clone()
    }

    /// Bind then invoke in one step.
    pub async fn call(&self, tool: &ToolSpec, values: &BTreeMap<String, String>) -> Result<InvocationRecord, ExecError> {
        self.invoke(tool, &bind_strings(tool, values)).await
    }

    pub async fn invoke(&self, tool: &ToolSpec, binding: &ParamBinding) -> Result<InvocationRecord, ExecError> {
        if !self.config.policy.allows(tool.method) {
            return Err(ExecError::MethodDisallowed { method: tool.method, allowed: self.config.policy.describe() });
        }
        let logical = match (&binding.request_url, binding.is_invocable()) {
            (Some(u), true) => u,
            _ => return Err(ExecError::NotInvocable(binding.unbound_required.clone())),
        };
        let url = apply_rewrites(logical, &self.config.rewrites);

        let slot = self.host_slot(&url);
        let mut last = slot.lock().await;
        if let Some(prev) = *last {
            let wait = self.config.courtesy_delay.saturating_sub(prev.elapsed());
            if !wait.is_zero() {
                tokio::time::sleep(wait).await;
            }
        }
        let record = self.send(tool, binding, &url).await;
        *last = Some(Instant::now());
        Ok(record)
    }

    async fn send(&self, tool: &ToolSpec, binding: &ParamBinding, url: &str) -> InvocationRecord {
        let started_at = Utc::now();
        let clock = Instant::now();
        let elapsed = |c: Instant| c.elapsed().as_millis() as u64;
        let client = if tool.verify_tls { &self.client } else { &self.insecure_client };
        let method = reqwest::Method::from_bytes(tool.method.as_str().as_bytes()).expect("valid method");
        let mut req = client.request(method, url);
        for (k, v) in &binding.headers {
            req = req.header(k.as_str(), v.as_str());
        }
        if tool.method.has_body() {
            let body: serde_json::Map<String, Value> = binding.query.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
            req = req.json(&body);
        }
        let mut resp = match req.send().await {
            Ok(r) => r,
            Err(e) => return InvocationRecord::transport_failure(url, started_at, elapsed(clock), describe_error(&e)),
        };
        let status = resp.status().as_u16();
        let mut body = Vec::new();
        let mut truncated = false;
        loop {
            match resp.chunk().await {
                Ok(Some(chunk)) => {
                    let room = self.config.max_body_bytes - body.len();
                    if chunk.len() > room {
                        body.extend_from_slice(&chunk[..room]);
                        truncated = true;
                        break;
                    }
                    body.extend_from_slice(&chunk);
                }
                Ok(None) => break,
                Err(e) => {
                    let mut rec = InvocationRecord::from_response(status, &body, true, url, started_at, elapsed(clock));
                    rec.error = Some(describe_error(&e));
                    return rec;
                }
            }
        }
        InvocationRecord::from_response(status, &body, truncated, url, started_at, elapsed(clock))
    }
}

fn describe_error(e: &reqwest::Error) -> String {
    let kind = if e.is_timeout() {
        "timeout"
    } else if e.is_connect() {
        "connection failed"
    } else {
        "request failed"
    };
    let mut msg = format!("{kind}: {e}");
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        msg.push_str(&format!(": {s}"));
        src = s.source();
    }
    msg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::compile_direct;
    use crate::docingest::ApiDocument;
    use serde_json::json;

    fn osrm_tool() -> ToolSpec {
        let doc: ApiDocument = serde_json::from_value(json!({
            "title": "OSRM", "source_id": "osrm",
            "endpoints": [{
                "name": "General Request", "method": "GET",
                "url": ["http://ec2-3-129-135-45.us-east-2.compute.amazonaws.com:{profile}/{service}/v1/test/{coordinates}[.{format}]?option=value&option=value"],
                "headers": [],
                "required_parameters": [
                    {"name": "profile", "example": "5000"},
                    {"name": "service", "example": "route"},
                    {"name": "coordinates", "example": "13.388860,52.517037;13.397634,52.529407"}
                ],
                "optional_parameters": [{"name": "format", "default": "json", "example": "json"}]
            }]
        }))
        .unwrap();
        compile_direct(&doc.endpoints[0], &doc).unwrap()
    }

    #[test]
    fn full_example_binding_is_invocable() {
        let tool = osrm_tool();
        let b = bind_strings(&tool, tool.example_binding.as_ref().unwrap());
        assert!(b.is_invocable());
        assert_eq!(
            b.request_url.as_deref(),
            Some("http://ec2-3-129-135-45.us-east-2.compute.amazonaws.com:5000/route/v1/test/13.388860%2C52.517037%3B13.397634%2C52.529407")
        );
    }

    #[test]
    fn non_default_suffix_is_appended() {
        let tool = osrm_tool();
        let mut v = tool.example_binding.clone().unwrap();
        v.insert("format".into(), "flatbuffers".into());
        assert!(bind_strings(&tool, &v).request_url.unwrap().ends_with("52.529407.flatbuffers"));
    }

    #[test]
    fn missing_required_reported() {
        let tool = osrm_tool();
        let mut v = tool.example_binding.clone().unwrap();
        v.remove("coordinates");
        let b = bind_strings(&tool, &v);
        assert_eq!(b.unbound_required, vec!["coordinates".to_string()]);
        assert!(b.request_url.is_none());
    }

    #[test]
    fn reserved_characters_are_percent_encoded() {
        let tool = osrm_tool();
        let mut v = tool.example_binding.clone().unwrap();
        v.insert("coordinates".into(), "a+b=c".into());
        assert!(bind_strings(&tool, &v).request_url.unwrap().ends_with("/v1/test/a%2Bb%3Dc"));
    }

    #[test]
    fn json_values_are_canonicalized() {
        let tool = osrm_tool();
        let mut v: BTreeMap<String, Value> = BTreeMap::new();
        v.insert("profile".into(), json!(5000));
        v.insert("service".into(), json!("route"));
        v.insert("coordinates".into(), json!("1,2"));
        v.insert("steps".into(), json!(true));
        let b = bind_params(&tool, &v);
        assert_eq!(b.values["profile"], "5000");
        assert!(b.request_url.unwrap().ends_with(":5000/route/v1/test/1%2C2?steps=true"));
    }

    #[test]
    fn rewrites_replace_matching_prefix() {
        let r = vec![UpstreamRewrite { from: "http://a.example:".into(), to: "http://127.0.0.1:9/".into() }];
        assert_eq!(apply_rewrites("http://a.example:5000/x", &r), "http://127.0.0.1:9/5000/x");
        assert_eq!(apply_rewrites("http://b.example/x", &r), "http://b.example/x");
    }

    #[test]
    fn record_serializes_core_and_extension_keys() {
        let rec = InvocationRecord::from_response(200, b"{\"a\":1}", false, "http://h/x", Utc::now(), 3);
        let v = serde_json::to_value(&rec).unwrap();
        for key in ["status_code", "text", "json", "content", "x_error", "x_request_url", "x_elapsed_ms"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(rec.json, Some(json!({"a": 1})));
        let text = InvocationRecord::from_response(200, b"plain", false, "u", Utc::now(), 0);
        assert_eq!(text.json, None);
        assert_eq!(text.text, "plain");
        let lossy = InvocationRecord::from_response(200, &[0xff, b'a'], false, "u", Utc::now(), 0);
        assert_eq!(lossy.content, "\u{fffd}a");
    }

    #[tokio::test]
    async fn unreachable_host_is_captured_not_thrown() {
        let exec = Executor::new(ExecutorConfig { timeout: Duration::from_secs(5), ..Default::default() }).unwrap();
        let mut tool = osrm_tool();
        // port 9 on loopback: nothing listens
        tool.url_template = "http://127.0.0.1:9/{profile}/{service}/v1/test/{coordinates}".into();
        let rec = exec.call(&tool, &tool.example_binding.clone().unwrap()).await.unwrap();
        assert_eq!(rec.status_code, None);
        assert!(rec.error.is_some());
        assert!(!rec.request_url.contains('{'));
    }

    #[tokio::test]
    async fn executor_rechecks_method_policy() {
        let exec = Executor::new(ExecutorConfig::default()).unwrap();
        let mut tool = osrm_tool();
        tool.method = HttpMethod::Delete;
        let err = exec.call(&tool, &tool.example_binding.clone().unwrap()).await.unwrap_err();
        assert!(matches!(err, ExecError::MethodDisallowed { .. }));
        let tool = osrm_tool();
        assert!(matches!(exec.call(&tool, &BTreeMap::new()).await, Err(ExecError::NotInvocable(_))));
    }
}
