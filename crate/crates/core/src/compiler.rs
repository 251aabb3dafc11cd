//! EndpointSpec to ToolSpec compilation.
//!
//! URL templates from documentation come in many dialects (`:id`, `{id}`,
//! `<id>`, `<int:id>`, `[.{format}]` optional suffixes, literal query tails).
//! [`normalize_url_template`] rewrites all of them to `{id}` form so that the
//! rest of the pipeline only ever sees one placeholder syntax.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::docingest::{collapse_double_scheme, is_absolute_url, slugify, ApiDocument, EndpointSpec, ParameterSpec};
use crate::exporter::harness_digest;
use crate::oracles::{OracleError, OracleGateway, OracleRequest, TaskKind};
use crate::prompts;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("malformed url {url:?}: {reason}")]
    MalformedUrl { url: String, reason: String },
    #[error("endpoint {endpoint:?} has a relative url and no base url is known")]
    MissingBaseUrl { endpoint: String, partial: Box<ToolSpec> },
    #[error("method {method} is not in the allow-list {allowed}")]
    MethodDisallowed { method: HttpMethod, allowed: String },
    #[error("unknown http method {0:?}")]
    UnknownMethod(String),
    #[error("fingerprint references unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("fingerprint references unknown endpoint {0:?}")]
    UnknownEndpoint(String),
    #[error("parameter {0:?} is not a fingerprint input and has no value to freeze")]
    FrozenWithoutValue(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Post,
    Put,
    Patch,
    Delete,
    Head,
    Options,
}

impl HttpMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Post => "POST",
            HttpMethod::Put => "PUT",
            HttpMethod::Patch => "PATCH",
            HttpMethod::Delete => "DELETE",
            HttpMethod::Head => "HEAD",
            HttpMethod::Options => "OPTIONS",
        }
    }

    /// Methods whose flat parameters travel as a JSON body.
    pub fn has_body(self) -> bool {
        matches!(self, HttpMethod::Post | HttpMethod::Put | HttpMethod::Patch)
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HttpMethod {
    type Err = CompileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "GET" => HttpMethod::Get,
            "POST" => HttpMethod::Post,
            "PUT" => HttpMethod::Put,
            "PATCH" => HttpMethod::Patch,
            "DELETE" => HttpMethod::Delete,
            "HEAD" => HttpMethod::Head,
            "OPTIONS" => HttpMethod::Options,
            _ => return Err(CompileError::UnknownMethod(s.to_string())),
        })
    }
}

/// Set of HTTP methods tools may use. Defaults to GET only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodPolicy {
    allow: BTreeSet<HttpMethod>,
}

impl Default for MethodPolicy {
    fn default() -> Self {
        Self { allow: BTreeSet::from([HttpMethod::Get]) }
    }
}

impl MethodPolicy {
    pub fn new(allow: impl IntoIterator<Item = HttpMethod>) -> Option<Self> {
        let allow: BTreeSet<_> = allow.into_iter().collect();
        (!allow.is_empty()).then_some(Self { allow })
    }

    /// Parse a comma-separated list such as `GET,POST`.
    pub fn parse(list: &str) -> Result<Self, CompileError> {
        let methods = list.split(',').filter(|s| !s.trim().is_empty()).map(HttpMethod::from_str).collect::<Result<Vec<_>, _>>()?;
        Self::new(methods).ok_or_else(|| CompileError::UnknownMethod(list.to_string()))
    }

    pub fn allows(&self, method: HttpMethod) -> bool {
        self.allow.contains(&method)
    }

    pub fn methods(&self) -> impl Iterator<Item = HttpMethod> + '_ {
        self.allow.iter().copied()
    }

    pub fn describe(&self) -> String {
        self.allow.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(",")
    }
}

pub fn enforce_method_policy(tool: ToolSpec, policy: &MethodPolicy) -> Result<ToolSpec, CompileError> {
    if policy.allows(tool.method) {
        Ok(tool)
    } else {
        Err(CompileError::MethodDisallowed { method: tool.method, allowed: policy.describe() })
    }
}

// ---------------------------------------------------------------------------
// URL templates

/// Everything outside RFC 3986 unreserved characters is escaped.
pub const PATH_VALUE_ENCODE_SET: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

pub fn encode_path_value(value: &str) -> String {
    utf8_percent_encode(value, PATH_VALUE_ENCODE_SET).to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionalSegment {
    /// Literal text emitted before the value, e.g. `.`.
    pub prefix: String,
    pub param: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySeed {
    pub name: String,
    /// Literal value from the documented URL; `None` for `k={placeholder}`.
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedUrl {
    pub template: String,
    pub path_params: Vec<String>,
    pub optional_suffix: Option<OptionalSegment>,
    pub query_seeds: Vec<QuerySeed>,
}

fn malformed(url: &str, reason: impl Into<String>) -> CompileError {
    CompileError::MalformedUrl { url: url.to_string(), reason: reason.into() }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

fn check_ident<'a>(url: &str, name: &'a str) -> Result<&'a str, CompileError> {
    let name = name.trim();
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if is_ident_start(c) && chars.all(is_ident_char) => Ok(name),
        _ => Err(malformed(url, format!("invalid placeholder name {name:?}"))),
    }
}

/// Rewrite the placeholders of a path (no query) into `{x}` form. Returns the
/// rewritten text, placeholder names in order, and an optional trailing
/// bracketed segment.
fn rewrite_path(url: &str, path: &str, allow_optional: bool) -> Result<(String, Vec<String>, Option<OptionalSegment>), CompileError> {
    let chars: Vec<char> = path.chars().collect();
    let mut out = String::with_capacity(path.len());
    let mut names = Vec::new();
    let mut optional = None;
    let mut i = 0;
    let scheme_end = path.find("://").map(|p| path[..p + 3].chars().count()).unwrap_or(0);
    while i < chars.len() {
        let c = chars[i];
        if i < scheme_end {
            out.push(c);
            i += 1;
            continue;
        }
        match c {
            '{' => {
                let close = chars[i + 1..].iter().position(|&x| x == '}' || x == '{').map(|p| p + i + 1);
                match close {
                    Some(j) if chars[j] == '}' => {
                        let name: String = chars[i + 1..j].iter().collect();
                        let name = check_ident(url, &name)?;
                        out.push_str(&format!("{{{name}}}"));
                        names.push(name.to_string());
                        i = j + 1;
                    }
                    _ => return Err(malformed(url, "unbalanced '{'")),
                }
            }
            '<' => {
                let j = chars[i + 1..].iter().position(|&x| x == '>').map(|p| p + i + 1).ok_or_else(|| malformed(url, "unbalanced '<'"))?;
                let inner: String = chars[i + 1..j].iter().collect();
                let name = inner.rsplit(':').next().unwrap_or_default();
                let name = check_ident(url, name)?;
                out.push_str(&format!("{{{name}}}"));
                names.push(name.to_string());
                i = j + 1;
            }
            ':' if out.ends_with('/') && chars.get(i + 1).copied().is_some_and(is_ident_start) => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let name: String = chars[i + 1..j].iter().collect();
                out.push_str(&format!("{{{name}}}"));
                names.push(name);
                i = j;
            }
            '[' => {
                if !allow_optional {
                    return Err(malformed(url, "nested optional segment"));
                }
                let j = chars[i + 1..].iter().position(|&x| x == ']').map(|p| p + i + 1).ok_or_else(|| malformed(url, "unbalanced '['"))?;
                if j + 1 != chars.len() {
                    return Err(malformed(url, "optional segment must end the path"));
                }
                let inner: String = chars[i + 1..j].iter().collect();
                let (text, inner_names, _) = rewrite_path(url, &inner, false)?;
                let [param] = inner_names.as_slice() else {
                    return Err(malformed(url, "optional segment must hold exactly one placeholder"));
                };
                let placeholder = format!("{{{param}}}");
                let Some(prefix) = text.strip_suffix(&placeholder) else {
                    return Err(malformed(url, "optional segment must end with its placeholder"));
                };
                optional = Some(OptionalSegment { prefix: prefix.to_string(), param: param.clone() });
                i = j + 1;
            }
            '}' | '>' | ']' => return Err(malformed(url, format!("unbalanced '{c}'"))),
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    Ok((out, names, optional))
}

fn parse_query_seeds(url: &str, query: &str) -> Result<Vec<QuerySeed>, CompileError> {
    let mut seeds: Vec<QuerySeed> = Vec::new();
    for pair in query.split('&').filter(|p| !p.trim().is_empty()) {
        let (name, value) = pair.split_once('=').unwrap_or((pair, ""));
        let name = name.trim();
        if name.is_empty() || seeds.iter().any(|s| s.name == name) {
            continue;
        }
        let (rewritten, placeholders, _) = rewrite_path(url, value, false)?;
        let value = if !placeholders.is_empty() {
            None
        } else if rewritten == "value" {
            // `?option=value` is documentation shorthand, not a real parameter
            continue;
        } else {
            Some(rewritten)
        };
        seeds.push(QuerySeed { name: name.to_string(), value });
    }
    Ok(seeds)
}

pub fn normalize_url_template(url: &str) -> Result<NormalizedUrl, CompileError> {
    let collapsed = collapse_double_scheme(url);
    if collapsed.is_empty() {
        return Err(malformed(url, "empty url"));
    }
    let without_fragment = collapsed.split('#').next().unwrap_or_default();
    let (path, query) = match without_fragment.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (without_fragment, None),
    };
    let (template, names, optional_suffix) = rewrite_path(url, path, true)?;
    let mut path_params: Vec<String> = Vec::new();
    for n in names {
        if !path_params.contains(&n) {
            path_params.push(n);
        }
    }
    if let Some(opt) = &optional_suffix {
        if path_params.contains(&opt.param) {
            return Err(malformed(url, "optional segment reuses a path placeholder"));
        }
    }
    let query_seeds = match query {
        Some(q) => parse_query_seeds(url, q)?,
        None => Vec::new(),
    };
    Ok(NormalizedUrl { template, path_params, optional_suffix, query_seeds })
}

/// Placeholder names appearing in a normalized template.
pub fn template_placeholders(template: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        names.push(rest[open + 1..open + close].to_string());
        rest = &rest[open + close + 1..];
    }
    names
}

/// Path portion (after the authority) of an absolute template.
pub fn template_path(template: &str) -> &str {
    let after_scheme = template.find("://").map(|p| &template[p + 3..]).unwrap_or(template);
    after_scheme.find('/').map(|p| &after_scheme[p..]).unwrap_or("")
}

// ---------------------------------------------------------------------------
// Tool IR

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    /// Key sent on the wire when it differs from `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wire_name: Option<String>,
    #[serde(rename = "type", default)]
    pub param_type: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub required: bool,
    #[serde(default)]
    pub default: Option<String>,
    #[serde(default)]
    pub example: Option<String>,
}

impl ToolParam {
    pub fn bare(name: &str, required: bool) -> Self {
        Self { name: name.into(), wire_name: None, param_type: None, description: None, required, default: None, example: None }
    }

    fn from_spec(spec: &ParameterSpec, required: bool) -> Self {
        Self {
            name: spec.name.trim().to_string(),
            wire_name: None,
            param_type: spec.param_type.clone(),
            description: spec.description.clone(),
            required,
            default: spec.default.as_ref().and_then(canonical_scalar),
            example: spec.example.as_ref().and_then(canonical_scalar),
        }
    }

    pub fn wire(&self) -> &str {
        self.wire_name.as_deref().unwrap_or(&self.name)
    }
}

/// Canonical textual form of a JSON value as sent over HTTP.
pub fn canonical_scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        other => Some(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuffixParam {
    pub prefix: String,
    pub param: ToolParam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Direct,
    Targeted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Unvalidated,
    Passed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSource {
    pub source_id: String,
    pub endpoint: String,
}

/// Executable, language-neutral tool definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub tool_id: String,
    pub name: String,
    pub description: String,
    pub method: HttpMethod,
    pub url_template: String,
    pub path_params: Vec<ToolParam>,
    #[serde(default)]
    pub optional_suffix: Option<SuffixParam>,
    pub query_params: Vec<ToolParam>,
    pub header_params: Vec<ToolParam>,
    /// Always-sent query values (parameters frozen by targeted compilation).
    #[serde(default)]
    pub fixed_query: BTreeMap<String, String>,
    pub example_binding: Option<BTreeMap<String, String>>,
    pub provenance: Provenance,
    pub source: ToolSource,
    pub harness_digest: String,
    pub status: ToolStatus,
    #[serde(default = "default_true")]
    pub verify_tls: bool,
    #[serde(default)]
    pub revision: u32,
}

fn default_true() -> bool {
    true
}

impl ToolSpec {
    pub fn file_name(&self) -> String {
        format!("{}.tool.json", self.tool_id)
    }

    pub fn path_param_names(&self) -> Vec<String> {
        self.path_params.iter().map(|p| p.name.clone()).collect()
    }

    /// Every parameter the caller may bind, in signature order.
    pub fn all_params(&self) -> impl Iterator<Item = &ToolParam> {
        self.path_params.iter().chain(self.optional_suffix.as_ref().map(|s| &s.param)).chain(&self.query_params).chain(&self.header_params)
    }

    pub fn param(&self, name: &str) -> Option<&ToolParam> {
        self.all_params().find(|p| p.name == name)
    }

    pub fn required_params(&self) -> impl Iterator<Item = &ToolParam> {
        self.all_params().filter(|p| p.required)
    }

    pub fn is_relative(&self) -> bool {
        !is_absolute_url(&self.url_template)
    }

    /// True when the absolute template has no path after the host.
    pub fn lacks_endpoint_path(&self) -> bool {
        !self.is_relative() && template_path(&self.url_template).trim_matches('/').is_empty()
    }
}

/// Deduplicating name allocator: `name`, `name_2`, `name_3`, ...
#[derive(Debug, Default, Clone)]
pub struct ToolNamer {
    used: HashMap<String, u32>,
}

impl ToolNamer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reserve(&mut self, name: &str) {
        self.used.entry(name.to_string()).or_insert(1);
    }

    pub fn allocate(&mut self, base: &str) -> String {
        let base = slugify(base);
        let base = if base.starts_with(|c: char| c.is_ascii_digit()) { format!("tool_{base}") } else { base };
        let mut n = *self.used.get(&base).unwrap_or(&0);
        loop {
            n += 1;
            let candidate = if n == 1 { base.clone() } else { format!("{base}_{n}") };
            if !self.used.contains_key(&candidate) {
                self.used.insert(base.clone(), n);
                self.used.insert(candidate.clone(), 1);
                return candidate;
            }
        }
    }
}

pub fn tool_id_for(source_id: &str, name: &str) -> String {
    format!("{source_id}.{name}")
}

fn join_base(base: &str, relative: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), relative.trim_start_matches('/'))
}

fn header_param(v: &Value) -> Option<ToolParam> {
    match v {
        Value::String(s) => {
            let (name, value) = s.split_once(':')?;
            let mut p = ToolParam::bare(name.trim(), false);
            p.default = Some(value.trim().to_string()).filter(|v| !v.is_empty());
            Some(p)
        }
        Value::Object(o) => {
            let name = o.get("name").or_else(|| o.get("key")).and_then(Value::as_str)?;
            let mut p = ToolParam::bare(name.trim(), o.get("required").and_then(Value::as_bool).unwrap_or(false));
            p.description = o.get("description").and_then(Value::as_str).map(String::from);
            p.default = o.get("value").or_else(|| o.get("default")).and_then(canonical_scalar);
            p.example = o.get("example").and_then(canonical_scalar);
            Some(p)
        }
        _ => None,
    }
}

/// Compile one endpoint with an explicit name. A relative URL without a base
/// still yields the (unresolved) tool inside `MissingBaseUrl` so that the
/// validator can label it.
pub fn compile_endpoint(endpoint: &EndpointSpec, doc: &ApiDocument, name: &str) -> Result<ToolSpec, CompileError> {
    let method: HttpMethod = endpoint.method.parse()?;
    let raw_url = endpoint.url.first().map(|u| collapse_double_scheme(u)).unwrap_or_default();
    let (absolute_url, resolved) = if is_absolute_url(&raw_url) {
        (raw_url.clone(), true)
    } else if let Some(base) = &doc.base_url {
        (join_base(base, &raw_url), true)
    } else {
        (raw_url.clone(), false)
    };
    let norm = normalize_url_template(&absolute_url)?;

    let declared: Vec<ToolParam> = endpoint
        .required_parameters
        .iter()
        .map(|p| ToolParam::from_spec(p, true))
        .chain(endpoint.optional_parameters.iter().map(|p| ToolParam::from_spec(p, false)))
        .collect();
    let mut taken = vec![false; declared.len()];
    let mut take = |name: &str| -> Option<ToolParam> {
        let idx = declared.iter().enumerate().position(|(i, p)| !taken[i] && p.name == name)?;
        taken[idx] = true;
        Some(declared[idx].clone())
    };

    let path_params: Vec<ToolParam> = norm
        .path_params
        .iter()
        .map(|n| {
            let mut p = take(n).unwrap_or_else(|| ToolParam::bare(n, true));
            p.required = true;
            p
        })
        .collect();
    let optional_suffix = norm.optional_suffix.as_ref().map(|seg| {
        let mut p = take(&seg.param).unwrap_or_else(|| ToolParam::bare(&seg.param, false));
        p.required = false;
        SuffixParam { prefix: seg.prefix.clone(), param: p }
    });

    let mut used: BTreeSet<String> = path_params.iter().map(|p| p.name.clone()).collect();
    used.extend(optional_suffix.iter().map(|s| s.param.name.clone()));
    let mut query_params = Vec::new();
    for (i, p) in declared.iter().enumerate() {
        if taken[i] {
            continue;
        }
        let mut p = p.clone();
        if used.contains(&p.name) {
            let wire = p.name.clone();
            p.name = format!("{wire}_query");
            let note = format!("(query parameter `{wire}`, renamed because a path parameter has the same name)");
            p.description = Some(match p.description.take() {
                Some(d) => format!("{d} {note}"),
                None => note,
            });
            p.wire_name = Some(wire);
        }
        used.insert(p.name.clone());
        query_params.push(p);
    }
    for seed in &norm.query_seeds {
        if used.contains(&seed.name) || query_params.iter().any(|q| q.wire() == seed.name) {
            continue;
        }
        let mut p = ToolParam::bare(&seed.name, false);
        p.default = seed.value.clone();
        used.insert(seed.name.clone());
        query_params.push(p);
    }
    let header_params: Vec<ToolParam> = endpoint.headers.iter().filter_map(header_param).collect();

    let mut tool = ToolSpec {
        tool_id: tool_id_for(&doc.source_id, name),
        name: name.to_string(),
        description: endpoint.description.clone().filter(|d| !d.trim().is_empty()).unwrap_or_else(|| endpoint.name.clone()),
        method,
        url_template: norm.template,
        path_params,
        optional_suffix,
        query_params,
        header_params,
        fixed_query: BTreeMap::new(),
        example_binding: None,
        provenance: Provenance::Direct,
        source: ToolSource { source_id: doc.source_id.clone(), endpoint: endpoint.name.clone() },
        harness_digest: harness_digest(),
        status: ToolStatus::Unvalidated,
        verify_tls: true,
        revision: 0,
    };
    tool.example_binding = example_binding_from_params(&tool);
    if resolved {
        Ok(tool)
    } else {
        Err(CompileError::MissingBaseUrl { endpoint: endpoint.name.clone(), partial: Box::new(tool) })
    }
}

/// Example binding when every required parameter has an example or default;
/// holds the documented examples of all parameters.
pub fn example_binding_from_params(tool: &ToolSpec) -> Option<BTreeMap<String, String>> {
    if tool.required_params().any(|p| p.example.is_none() && p.default.is_none()) {
        return None;
    }
    Some(tool.all_params().filter_map(|p| p.example.clone().map(|e| (p.name.clone(), e))).collect())
}

pub fn compile_direct(endpoint: &EndpointSpec, doc: &ApiDocument) -> Result<ToolSpec, CompileError> {
    compile_endpoint(endpoint, doc, &ToolNamer::new().allocate(&endpoint.name))
}

#[derive(Debug, Default)]
pub struct CompiledDocument {
    pub tools: Vec<ToolSpec>,
    /// Tools that exist but cannot run as-is (relative URL, no base).
    pub unresolved: Vec<ToolSpec>,
    pub rejected: Vec<(String, CompileError)>,
}

/// Compile every endpoint of a document, enforcing the method policy.
pub fn compile_document(doc: &ApiDocument, policy: &MethodPolicy, namer: &mut ToolNamer) -> CompiledDocument {
    let mut out = CompiledDocument::default();
    for endpoint in &doc.endpoints {
        let method = match endpoint.method.parse::<HttpMethod>() {
            Ok(m) => m,
            Err(e) => {
                out.rejected.push((endpoint.name.clone(), e));
                continue;
            }
        };
        if !policy.allows(method) {
            out.rejected.push((endpoint.name.clone(), CompileError::MethodDisallowed { method, allowed: policy.describe() }));
            continue;
        }
        let name = namer.allocate(&endpoint.name);
        match compile_endpoint(endpoint, doc, &name) {
            Ok(t) => out.tools.push(t),
            Err(CompileError::MissingBaseUrl { partial, .. }) => out.unresolved.push(*partial),
            Err(e) => out.rejected.push((endpoint.name.clone(), e)),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Target-oriented generation

/// Cap on fingerprints per document.
pub const MAX_FINGERPRINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintInput {
    pub name: String,
    #[serde(default)]
    pub semantic_type: Option<String>,
    #[serde(default)]
    pub example: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintParent {
    pub source_id: String,
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub use_case: String,
    pub inputs: Vec<FingerprintInput>,
    pub output: String,
    pub parent: FingerprintParent,
}

#[derive(Debug, Deserialize)]
struct RawFingerprint {
    use_case: String,
    endpoint: String,
    #[serde(default)]
    inputs: Vec<RawInput>,
    #[serde(default)]
    output: String,
}

#[derive(Debug, Deserialize)]
struct RawInput {
    name: String,
    #[serde(default)]
    semantic_type: Option<String>,
    #[serde(default)]
    example: Option<Value>,
}

/// Parameter names an endpoint exposes, including undeclared URL placeholders.
fn endpoint_param_names(endpoint: &EndpointSpec) -> BTreeSet<String> {
    let mut names: BTreeSet<String> = endpoint.parameters().map(|p| p.name.trim().to_string()).collect();
    if let Some(Ok(norm)) = endpoint.url.first().map(|u| normalize_url_template(u)) {
        names.extend(norm.path_params);
        names.extend(norm.optional_suffix.map(|s| s.param));
    }
    names
}

pub fn check_fingerprint(fp: &Fingerprint, doc: &ApiDocument) -> Result<(), CompileError> {
    let endpoint = doc.endpoint(&fp.parent.endpoint).ok_or_else(|| CompileError::UnknownEndpoint(fp.parent.endpoint.clone()))?;
    let known = endpoint_param_names(endpoint);
    match fp.inputs.iter().find(|i| !known.contains(&i.name)) {
        Some(bad) => Err(CompileError::UnknownParameter(bad.name.clone())),
        None => Ok(()),
    }
}

pub async fn generate_fingerprints(gw: &OracleGateway, doc: &ApiDocument) -> Result<Vec<Fingerprint>, CompileError> {
    let api_json = serde_json::to_string_pretty(doc).expect("ApiDocument serializes");
    let prompt = prompts::render(prompts::FINGERPRINT, &[("api_json", &api_json)]);
    let req = OracleRequest::new(TaskKind::Fingerprint, prompt)?.with_schema(prompts::fingerprint_schema());
    let value = gw.complete(&req).await?.into_json()?;
    let raw: Vec<RawFingerprint> = value
        .get("fingerprints")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| OracleError::MalformedResponse(format!("fingerprints: {e}")))?
        .unwrap_or_default();
    let mut out = Vec::new();
    for r in raw {
        let fp = Fingerprint {
            use_case: r.use_case,
            inputs: r
                .inputs
                .into_iter()
                .map(|i| FingerprintInput { name: i.name, semantic_type: i.semantic_type, example: i.example.as_ref().and_then(canonical_scalar) })
                .collect(),
            output: r.output,
            parent: FingerprintParent { source_id: doc.source_id.clone(), endpoint: r.endpoint },
        };
        match check_fingerprint(&fp, doc) {
            Ok(()) => out.push(fp),
            Err(e) => tracing::warn!(use_case = %fp.use_case, error = %e, "dropping fingerprint"),
        }
        if out.len() == MAX_FINGERPRINTS {
            break;
        }
    }
    Ok(out)
}

/// Compile a fingerprint into a tool exposing only its inputs; every other
/// parameter is frozen to its default (or example, for path parameters).
pub fn compile_targeted(fp: &Fingerprint, doc: &ApiDocument, name: &str) -> Result<ToolSpec, CompileError> {
    check_fingerprint(fp, doc)?;
    let endpoint = doc.endpoint(&fp.parent.endpoint).ok_or_else(|| CompileError::UnknownEndpoint(fp.parent.endpoint.clone()))?;
    let mut tool = match compile_endpoint(endpoint, doc, name) {
        Ok(t) => t,
        Err(CompileError::MissingBaseUrl { partial, .. }) => *partial,
        Err(e) => return Err(e),
    };
    let inputs: BTreeMap<&str, &FingerprintInput> = fp.inputs.iter().map(|i| (i.name.as_str(), i)).collect();
    let expose = |mut p: ToolParam| -> ToolParam {
        p.required = true;
        if let Some(ex) = inputs.get(p.name.as_str()).and_then(|i| i.example.clone()) {
            p.example = Some(ex);
        }
        if let Some(t) = inputs.get(p.name.as_str()).and_then(|i| i.semantic_type.clone()) {
            p.param_type.get_or_insert(t);
        }
        p
    };

    let mut path_params = Vec::new();
    for p in std::mem::take(&mut tool.path_params) {
        if inputs.contains_key(p.name.as_str()) {
            path_params.push(expose(p));
        } else {
            let value = p.default.clone().or(p.example.clone()).ok_or_else(|| CompileError::FrozenWithoutValue(p.name.clone()))?;
            tool.url_template = tool.url_template.replace(&format!("{{{}}}", p.name), &encode_path_value(&value));
        }
    }
    tool.path_params = path_params;
    tool.optional_suffix = tool.optional_suffix.take().and_then(|mut s| {
        inputs.contains_key(s.param.name.as_str()).then(|| {
            s.param = expose(s.param);
            s
        })
    });
    let mut query_params = Vec::new();
    for p in std::mem::take(&mut tool.query_params) {
        if inputs.contains_key(p.name.as_str()) {
            query_params.push(expose(p));
        } else if let Some(d) = &p.default {
            tool.fixed_query.insert(p.wire().to_string(), d.clone());
        }
    }
    tool.query_params = query_params;
    tool.header_params.retain(|p| inputs.contains_key(p.name.as_str()) || p.default.is_some());

    tool.provenance = Provenance::Targeted;
    tool.description = if fp.output.trim().is_empty() { fp.use_case.clone() } else { format!("{} Returns: {}", fp.use_case, fp.output) };
    tool.example_binding = example_binding_from_params(&tool).filter(|b| tool.required_params().all(|p| b.contains_key(&p.name)));
    Ok(tool)
}
