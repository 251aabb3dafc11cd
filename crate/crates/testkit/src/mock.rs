//! Mock HTTP API server with declarative routes, fault modes and a request log.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, Method, Request, Response, StatusCode};
use axum::Router;
use percent_encoding::percent_decode_str;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::task::JoinHandle;

/// How long a `timeout` route stalls before answering.
pub const STALL: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum MockError {
    #[error("cannot bind mock server: {0}")]
    PortUnavailable(String),
    #[error("invalid route {path}: {reason}")]
    InvalidRoute { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    #[default]
    None,
    Always500,
    Timeout,
    AuthWall,
    EmptyBody,
}

fn get() -> String {
    "GET".into()
}

fn ok() -> u16 {
    200
}

/// One served route. Values of path placeholders and query parameters named
/// in `accept` must be in the listed set, else the route answers 404 with an
/// error object. `responses` picks a body by the value of `key`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRoute {
    #[serde(default = "get")]
    pub method: String,
    pub path: String,
    #[serde(default)]
    pub required_query: Vec<String>,
    #[serde(default)]
    pub accept: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub key: Option<String>,
    #[serde(default)]
    pub responses: BTreeMap<String, Value>,
    /// JSON body, or text when a string.
    #[serde(default)]
    pub body: Option<Value>,
    #[serde(default = "ok")]
    pub status: u16,
    #[serde(default)]
    pub fault: FaultMode,
}

impl MockRoute {
    pub fn get(path: &str, body: Value) -> Self {
        Self {
            method: get(),
            path: path.to_string(),
            required_query: Vec::new(),
            accept: BTreeMap::new(),
            key: None,
            responses: BTreeMap::new(),
            body: Some(body),
            status: 200,
            fault: FaultMode::None,
        }
    }

    pub fn with_status(mut self, status: u16) -> Self {
        self.status = status;
        self
    }

    pub fn with_fault(mut self, fault: FaultMode) -> Self {
        self.fault = fault;
        self
    }

    pub fn with_accept(mut self, param: &str, values: &[&str]) -> Self {
        self.accept.insert(param.to_string(), values.iter().map(|v| v.to_string()).collect());
        self
    }

    pub fn with_required_query(mut self, name: &str) -> Self {
        self.required_query.push(name.to_string());
        self
    }

    fn segments(&self) -> Vec<&str> {
        self.path.trim_start_matches('/').split('/').collect()
    }

    fn literal_count(&self) -> usize {
        self.segments().iter().filter(|s| !is_placeholder(s)).count()
    }

    fn validate(&self) -> Result<(), MockError> {
        let bad = |reason: &str| MockError::InvalidRoute { path: self.path.clone(), reason: reason.into() };
        if !self.path.starts_with('/') {
            return Err(bad("path must start with '/'"));
        }
        if self.method.parse::<Method>().is_err() {
            return Err(bad("unknown method"));
        }
        if StatusCode::from_u16(self.status).is_err() {
            return Err(bad("invalid status"));
        }
        for seg in self.segments() {
            if seg.starts_with(':') || seg.contains('<') || (seg.contains('{') && !is_placeholder(seg)) {
                return Err(bad("placeholders must be whole `{param}` segments"));
            }
        }
        Ok(())
    }

    /// Captured placeholder values when `path` matches.
    fn capture(&self, path: &str) -> Option<BTreeMap<String, String>> {
        let want = self.segments();
        let got: Vec<&str> = path.trim_start_matches('/').split('/').collect();
        if want.len() != got.len() {
            return None;
        }
        let mut out = BTreeMap::new();
        for (w, g) in want.iter().zip(&got) {
            let value = percent_decode_str(g).decode_utf8_lossy().into_owned();
            if is_placeholder(w) {
                if value.is_empty() {
                    return None;
                }
                out.insert(w[1..w.len() - 1].to_string(), value);
            } else if *w != value {
                return None;
            }
        }
        Some(out)
    }
}

fn is_placeholder(seg: &str) -> bool {
    seg.len() > 2 && seg.starts_with('{') && seg.ends_with('}') && !seg[1..seg.len() - 1].contains(['{', '}'])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedRequest {
    pub method: String,
    pub path: String,
    pub query: Option<String>,
}

/// Append-only log shared with the server task.
#[derive(Debug, Clone, Default)]
pub struct RequestLog(Arc<Mutex<Vec<LoggedRequest>>>);

impl RequestLog {
    fn push(&self, r: LoggedRequest) {
        self.0.lock().expect("log lock").push(r);
    }

    pub fn entries(&self) -> Vec<LoggedRequest> {
        self.0.lock().expect("log lock").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("log lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.0.lock().expect("log lock").clear();
    }

    pub fn non_get(&self) -> Vec<LoggedRequest> {
        self.entries().into_iter().filter(|r| r.method != "GET").collect()
    }
}

struct MockState {
    routes: Vec<MockRoute>,
    log: RequestLog,
}

/// Running server; aborted on drop.
#[derive(Debug)]
pub struct MockServer {
    addr: SocketAddr,
    log: RequestLog,
    task: JoinHandle<()>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn log(&self) -> &RequestLog {
        &self.log
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Serve `routes` on an ephemeral loopback port.
pub async fn start_mock(routes: Vec<MockRoute>) -> Result<MockServer, MockError> {
    start_mock_on("127.0.0.1:0", routes).await
}

pub async fn start_mock_on(bind: &str, mut routes: Vec<MockRoute>) -> Result<MockServer, MockError> {
    for r in &routes {
        r.validate()?;
    }
    // Most literal segments first, so `/glycan/search` wins over `/glycan/{id}`.
    routes.sort_by_key(|r| std::cmp::Reverse(r.literal_count()));
    let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| MockError::PortUnavailable(e.to_string()))?;
    let addr = listener.local_addr().map_err(|e| MockError::PortUnavailable(e.to_string()))?;
    let log = RequestLog::default();
    let state = Arc::new(MockState { routes, log: log.clone() });
    let app = Router::new().fallback(handle).with_state(state);
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::warn!(error = %e, "mock server stopped");
        }
    });
    Ok(MockServer { addr, log, task })
}

fn query_pairs(query: Option<&str>) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for pair in query.unwrap_or("").split('&').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        let decode = |s: &str| percent_decode_str(&s.replace('+', " ")).decode_utf8_lossy().into_owned();
        out.entry(decode(k)).or_insert_with(|| decode(v));
    }
    out
}

fn respond(status: u16, body: &Value) -> Response<Body> {
    let (ctype, bytes) = match body {
        Value::String(s) => ("text/plain; charset=utf-8", s.clone().into_bytes()),
        other => ("application/json", serde_json::to_vec(other).expect("json body")),
    };
    Response::builder()
        .status(StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR))
        .header(header::CONTENT_TYPE, ctype)
        .body(Body::from(bytes))
        .expect("response")
}

async fn handle(State(state): State<Arc<MockState>>, req: Request<Body>) -> Response<Body> {
    let method = req.method().as_str().to_string();
    let path = req.uri().path().to_string();
    let query = req.uri().query().map(String::from);
    state.log.push(LoggedRequest { method: method.clone(), path: path.clone(), query: query.clone() });

    let matched = state.routes.iter().filter(|r| r.method.eq_ignore_ascii_case(&method)).find_map(|r| r.capture(&path).map(|c| (r, c)));
    let Some((route, captures)) = matched else {
        return respond(404, &Value::String(format!("Cannot {method} {path}")));
    };
    match route.fault {
        FaultMode::Always500 => return respond(500, &json!({"error": "internal server error"})),
        FaultMode::AuthWall => return respond(401, &json!({"message": "invalid key"})),
        FaultMode::Timeout => {
            tokio::time::sleep(STALL).await;
            return respond(504, &json!({"error": "stalled"}));
        }
        FaultMode::EmptyBody => return respond(route.status, &Value::String(String::new())),
        FaultMode::None => {}
    }
    let query = query_pairs(query.as_deref());
    if let Some(missing) = route.required_query.iter().find(|q| !query.contains_key(*q)) {
        return respond(400, &json!({"error": format!("missing required query parameter '{missing}'")}));
    }
    let mut values = query;
    values.extend(captures);
    for (param, allowed) in &route.accept {
        if let Some(v) = values.get(param) {
            if !allowed.contains(v) {
                return respond(404, &json!({"error": format!("unknown {param} '{v}'")}));
            }
        }
    }
    let body = route
        .key
        .as_ref()
        .and_then(|k| values.get(k))
        .and_then(|v| route.responses.get(v))
        .or(route.body.as_ref())
        .cloned()
        .unwrap_or_else(|| json!({}));
    respond(route.status, &body)
}
