//! List/describe/invoke HTTP surface over a ToolSet.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::{emit_executable_tool, ExportError, ToolSet};
use crate::compiler::{ToolParam, ToolSpec};
use crate::executor::{bind_params, ExecError, Executor};

struct ServiceState {
    set: ToolSet,
    executor: Arc<Executor>,
}

type Shared = Arc<ServiceState>;

fn not_found(name: &str) -> Response {
    (StatusCode::NOT_FOUND, Json(json!({ "error": "unknown tool", "name": name }))).into_response()
}

fn docstring(tool: &ToolSpec) -> String {
    let src = emit_executable_tool(tool);
    let Some(a) = src.find("\"\"\"") else { return String::new() };
    let rest = &src[a + 3..];
    rest.find("\"\"\"").map(|b| rest[..b].trim().to_string()).unwrap_or_default()
}

fn describe_param(p: &ToolParam, location: &str) -> Value {
    json!({
        "name": p.name,
        "wire_name": p.wire(),
        "in": location,
        "required": p.required,
        "type": p.param_type,
        "description": p.description,
        "default": p.default,
        "example": p.example,
    })
}

async fn list_tools(State(state): State<Shared>) -> Json<Value> {
    let items: Vec<Value> = state
        .set
        .tools()
        .iter()
        .map(|t| json!({ "name": t.name, "summary": t.description.lines().next().unwrap_or("").trim(), "method": t.method }))
        .collect();
    Json(Value::Array(items))
}

async fn describe_tool(State(state): State<Shared>, Path(name): Path<String>) -> Response {
    let Some(tool) = state.set.get(&name) else { return not_found(&name) };
    let mut params: Vec<Value> = tool.path_params.iter().map(|p| describe_param(p, "path")).collect();
    params.extend(tool.optional_suffix.iter().map(|s| describe_param(&s.param, "path_suffix")));
    params.extend(tool.query_params.iter().map(|p| describe_param(p, "query")));
    params.extend(tool.header_params.iter().map(|p| describe_param(p, "header")));
    Json(json!({
        "name": tool.name,
        "description": tool.description,
        "method": tool.method,
        "url_template": tool.url_template,
        "parameters": params,
        "example": tool.example_binding,
        "doc": docstring(tool),
    }))
    .into_response()
}

async fn invoke_tool(State(state): State<Shared>, Path(name): Path<String>, body: Bytes) -> Response {
    let Some(tool) = state.set.get(&name) else { return not_found(&name) };
    let parsed = if body.iter().all(u8::is_ascii_whitespace) { Ok(Value::Null) } else { serde_json::from_slice(&body) };
    let values: BTreeMap<String, Value> = match parsed {
        Ok(Value::Null) => BTreeMap::new(),
        Ok(Value::Object(o)) => o.into_iter().collect(),
        _ => return (StatusCode::BAD_REQUEST, Json(json!({ "error": "body must be a JSON object of parameter values" }))).into_response(),
    };
    let binding = bind_params(tool, &values);
    if !binding.is_invocable() {
        return (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "error": "missing required parameters", "missing": binding.unbound_required })))
            .into_response();
    }
    match state.executor.invoke(tool, &binding).await {
        Ok(rec) if rec.status_code.is_none() => (StatusCode::BAD_GATEWAY, Json(json!(rec))).into_response(),
        Ok(rec) => Json(json!(rec)).into_response(),
        Err(ExecError::MethodDisallowed { method, allowed }) => {
            (StatusCode::FORBIDDEN, Json(json!({ "error": format!("method {method} is not allowed"), "allowed": allowed }))).into_response()
        }
        Err(ExecError::NotInvocable(missing)) => {
            (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "error": "missing required parameters", "missing": missing }))).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() }))).into_response(),
    }
}

pub fn router(set: ToolSet, executor: Arc<Executor>) -> Router {
    let state = Arc::new(ServiceState { set, executor });
    Router::new()
        .route("/tools", get(list_tools))
        .route("/tools/{name}", get(describe_tool))
        .route("/tools/{name}/invoke", post(invoke_tool))
        .with_state(state)
}

/// A running tool service. Dropping the handle does not stop the server;
/// call [`ServiceHandle::shutdown`].
#[derive(Debug)]
pub struct ServiceHandle {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl ServiceHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }

    /// Serve until the process is interrupted.
    pub async fn wait(self) {
        let _ = self.task.await;
    }
}

pub async fn serve_tools(set: ToolSet, executor: Arc<Executor>, bind: &str) -> Result<ServiceHandle, ExportError> {
    let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| ExportError::Bind { addr: bind.to_string(), reason: e.to_string() })?;
    let addr = listener.local_addr().map_err(|e| ExportError::Bind { addr: bind.to_string(), reason: e.to_string() })?;
    let app = router(set, executor);
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    tracing::info!(%addr, "tool service listening");
    Ok(ServiceHandle { addr, stop: Some(tx), task })
}
