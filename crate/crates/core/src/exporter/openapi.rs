//! OpenAPI 3.1 projection of a ToolSet.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value};

use super::{ExportError, ToolSet};
use crate::compiler::{template_placeholders, ToolParam, ToolSpec};

/// Split an absolute template into (server, path). A templated port
/// (`host:{p}/rest`) cannot live in an OpenAPI server URL next to
/// per-operation parameters, so it is lifted into the path as `/{p}/rest`.
pub fn split_server(template: &str) -> (String, String) {
    let (scheme, rest) = match template.find("://") {
        Some(i) => (&template[..i + 3], &template[i + 3..]),
        None => ("", template),
    };
    let (authority, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, ""),
    };
    if let Some(colon) = authority.find(":{") {
        let host = &authority[..colon];
        let port = &authority[colon + 1..];
        return (format!("{scheme}{host}"), format!("/{port}{path}"));
    }
    let path = if path.is_empty() { "/".to_string() } else { path.to_string() };
    (format!("{scheme}{authority}"), path)
}

fn param_object(p: &ToolParam, location: &str, required: bool) -> Value {
    let mut schema = Map::new();
    schema.insert("type".into(), json!("string"));
    if let Some(d) = &p.default {
        schema.insert("default".into(), json!(d));
    }
    let mut o = Map::new();
    o.insert("name".into(), json!(p.wire()));
    o.insert("in".into(), json!(location));
    o.insert("required".into(), json!(required));
    if let Some(d) = &p.description {
        o.insert("description".into(), json!(d));
    }
    o.insert("schema".into(), Value::Object(schema));
    if let Some(e) = &p.example {
        o.insert("example".into(), json!(e));
    }
    Value::Object(o)
}

fn operation(tool: &ToolSpec, server: &str) -> Value {
    let mut params = Vec::new();
    for p in &tool.path_params {
        params.push(param_object(p, "path", true));
    }
    for p in &tool.query_params {
        params.push(param_object(p, "query", p.required));
    }
    for p in &tool.header_params {
        params.push(param_object(p, "header", p.required));
    }
    let summary = tool.description.lines().next().unwrap_or("").trim();
    let mut op = Map::new();
    op.insert("operationId".into(), json!(tool.name));
    op.insert("summary".into(), json!(if summary.is_empty() { tool.name.as_str() } else { summary }));
    op.insert("description".into(), json!(tool.description));
    op.insert("servers".into(), json!([{ "url": server }]));
    op.insert("parameters".into(), Value::Array(params));
    if let Some(s) = &tool.optional_suffix {
        op.insert("x-optional-suffix".into(), json!({ "prefix": s.prefix, "name": s.param.name, "default": s.param.default }));
    }
    if !tool.fixed_query.is_empty() {
        op.insert("x-fixed-query".into(), json!(tool.fixed_query));
    }
    op.insert("responses".into(), json!({"200": {"description": "Successful response"}, "default": {"description": "Error response"}}));
    Value::Object(op)
}

pub fn emit_openapi(set: &ToolSet) -> Result<Value, ExportError> {
    if set.is_empty() {
        return Err(ExportError::EmptySet);
    }
    let mut names = BTreeSet::new();
    let mut paths: BTreeMap<String, Map<String, Value>> = BTreeMap::new();
    for tool in set.tools() {
        if !names.insert(tool.name.as_str()) {
            return Err(ExportError::NameCollision(tool.name.clone()));
        }
        let (server, path) = split_server(&tool.url_template);
        let method = tool.method.as_str().to_ascii_lowercase();
        let item = paths.entry(path.clone()).or_default();
        if item.contains_key(&method) {
            return Err(ExportError::PathCollision { path, method });
        }
        item.insert(method, operation(tool, &server));
    }
    Ok(json!({
        "openapi": "3.1.0",
        "info": {
            "title": "doc2tool verified tools",
            "version": "1.0.0",
            "description": format!("{} verified tools", set.len())
        },
        "paths": paths
    }))
}

/// Path, method and parameter (name, location, required) triples, sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OperationShape {
    pub path: String,
    pub method: String,
    pub params: Vec<(String, String, bool)>,
}

impl OperationShape {
    pub fn of_tool(tool: &ToolSpec) -> Self {
        let (_, path) = split_server(&tool.url_template);
        let mut params: Vec<(String, String, bool)> = tool
            .path_params
            .iter()
            .map(|p| (p.wire().to_string(), "path".into(), true))
            .chain(tool.query_params.iter().map(|p| (p.wire().to_string(), "query".into(), p.required)))
            .chain(tool.header_params.iter().map(|p| (p.wire().to_string(), "header".into(), p.required)))
            .collect();
        params.sort();
        Self { path, method: tool.method.as_str().to_ascii_lowercase(), params }
    }
}

/// Re-read the structural projection of an emitted document.
pub fn openapi_structure(doc: &Value) -> Vec<OperationShape> {
    let mut out = Vec::new();
    let Some(paths) = doc.get("paths").and_then(Value::as_object) else { return out };
    for (path, item) in paths {
        let Some(item) = item.as_object() else { continue };
        for (method, op) in item {
            let mut params: Vec<(String, String, bool)> = op
                .get("parameters")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
                .filter_map(|p| {
                    Some((
                        p.get("name")?.as_str()?.to_string(),
                        p.get("in")?.as_str()?.to_string(),
                        p.get("required").and_then(Value::as_bool).unwrap_or(false),
                    ))
                })
                .collect();
            params.sort();
            out.push(OperationShape { path: path.clone(), method: method.clone(), params });
        }
    }
    out.sort();
    out
}

const OPERATION_KEYS: [&str; 8] = ["get", "put", "post", "delete", "options", "head", "patch", "trace"];
const LOCATIONS: [&str; 4] = ["path", "query", "header", "cookie"];

/// Structural checks for the OpenAPI 3.1 subset this exporter produces.
/// Returns every violation found.
pub fn check_openapi(doc: &Value) -> Vec<String> {
    let mut v = Vec::new();
    match doc.get("openapi").and_then(Value::as_str) {
        Some(s) if s.starts_with("3.1.") => {}
        other => v.push(format!("openapi version must be 3.1.x, got {other:?}")),
    }
    for key in ["title", "version"] {
        if doc.pointer(&format!("/info/{key}")).and_then(Value::as_str).is_none() {
            v.push(format!("info.{key} missing"));
        }
    }
    let Some(paths) = doc.get("paths").and_then(Value::as_object) else {
        v.push("paths missing".into());
        return v;
    };
    let mut op_ids = BTreeSet::new();
    for (path, item) in paths {
        if !path.starts_with('/') {
            v.push(format!("path {path} does not start with /"));
        }
        let templated: BTreeSet<String> = template_placeholders(path).into_iter().collect();
        let Some(item) = item.as_object() else {
            v.push(format!("path item {path} is not an object"));
            continue;
        };
        for (method, op) in item {
            let at = format!("{method} {path}");
            if !OPERATION_KEYS.contains(&method.as_str()) {
                v.push(format!("{at}: unknown operation key"));
                continue;
            }
            match op.get("operationId").and_then(Value::as_str) {
                Some(id) if !op_ids.insert(id.to_string()) => v.push(format!("{at}: duplicate operationId {id}")),
                Some(_) => {}
                None => v.push(format!("{at}: operationId missing")),
            }
            if op.get("responses").and_then(Value::as_object).is_none_or(|r| r.is_empty()) {
                v.push(format!("{at}: responses missing"));
            }
            let mut seen = BTreeSet::new();
            let mut path_params = BTreeSet::new();
            for p in op.get("parameters").and_then(Value::as_array).into_iter().flatten() {
                let (Some(name), Some(loc)) = (p.get("name").and_then(Value::as_str), p.get("in").and_then(Value::as_str)) else {
                    v.push(format!("{at}: parameter without name/in"));
                    continue;
                };
                if !LOCATIONS.contains(&loc) {
                    v.push(format!("{at}: parameter {name} has invalid location {loc}"));
                }
                if !seen.insert((name.to_string(), loc.to_string())) {
                    v.push(format!("{at}: duplicate parameter {name} in {loc}"));
                }
                if p.get("schema").is_none() {
                    v.push(format!("{at}: parameter {name} has no schema"));
                }
                if loc == "path" {
                    if p.get("required").and_then(Value::as_bool) != Some(true) {
                        v.push(format!("{at}: path parameter {name} must be required"));
                    }
                    path_params.insert(name.to_string());
                }
            }
            if path_params != templated {
                v.push(format!("{at}: path parameters {path_params:?} do not match template {templated:?}"));
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templated_port_moves_into_path() {
        let (server, path) = split_server("http://ec2-3-129-135-45.us-east-2.compute.amazonaws.com:{profile}/{service}/v1/test/{coordinates}");
        assert_eq!(server, "http://ec2-3-129-135-45.us-east-2.compute.amazonaws.com");
        assert_eq!(path, "/{profile}/{service}/v1/test/{coordinates}");
    }

    #[test]
    fn plain_hosts() {
        assert_eq!(split_server("https://a.b:8080/x/{y}"), ("https://a.b:8080".into(), "/x/{y}".into()));
        assert_eq!(split_server("https://a.b"), ("https://a.b".into(), "/".into()));
    }

    #[test]
    fn checker_flags_mismatched_path_params() {
        let doc = json!({
            "openapi": "3.1.0", "info": {"title": "t", "version": "1"},
            "paths": {"/a/{x}": {"get": {"operationId": "a", "responses": {"200": {"description": "ok"}},
                "parameters": [{"name": "y", "in": "path", "required": true, "schema": {"type": "string"}}]}}}
        });
        let v = check_openapi(&doc);
        assert_eq!(v.len(), 1, "{v:?}");
    }
}
