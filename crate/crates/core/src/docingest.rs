//! Documentation ingestion: load pages, screen out pages without API
//! content, grade documentation quality and extract the structured
//! [`ApiDocument`].

use std::fmt;
use std::path::Path;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::oracles::{OracleError, OracleGateway, OracleRequest, TaskKind};
use crate::prompts;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {origin}: {reason}")]
    IoFailure { origin: String, reason: String },
    #[error("unsupported media for {0}")]
    UnsupportedMedia(String),
    #[error("unparseable quality label {0:?}")]
    UnparseableLabel(String),
    #[error("extraction violates schema: {}", .0.join("; "))]
    SchemaViolation(Vec<String>),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Media {
    Html,
    Markdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub source_id: String,
    pub origin: String,
    pub media: Media,
    /// Visible text. HTML bodies are already converted.
    pub body: String,
    pub fetched_at: DateTime<Utc>,
}

impl RawDocument {
    /// Build a document from in-memory text, converting HTML to visible text.
    pub fn from_text(source_id: &str, origin: &str, media: Media, raw: &str) -> Self {
        let body = match media {
            Media::Html => html_to_text(raw),
            Media::Markdown => raw.to_string(),
        };
        Self { source_id: source_id.to_string(), origin: origin.to_string(), media, body, fetched_at: Utc::now() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    #[serde(rename = "type", default)]
    pub param_type: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub default: Option<Value>,
    #[serde(default)]
    pub example: Option<Value>,
}

impl ParameterSpec {
    pub fn named(name: &str) -> Self {
        Self { name: name.to_string(), param_type: None, description: None, default: None, example: None }
    }
}

pub const HTTP_METHODS: [&str; 7] = ["GET", "POST", "PUT", "PATCH", "DELETE", "HEAD", "OPTIONS"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    pub method: String,
    #[serde(deserialize_with = "one_or_many")]
    pub url: Vec<String>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub headers: Vec<Value>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub required_parameters: Vec<ParameterSpec>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub optional_parameters: Vec<ParameterSpec>,
}

impl EndpointSpec {
    pub fn parameters(&self) -> impl Iterator<Item = &ParameterSpec> {
        self.required_parameters.iter().chain(&self.optional_parameters)
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters().find(|p| p.name == name)
    }

    /// True when the primary URL lacks a scheme and host.
    pub fn has_relative_url(&self) -> bool {
        self.url.first().is_none_or(|u| !is_absolute_url(u))
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

fn null_as_empty<'de, D, T>(d: D) -> Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Ok(Option::<Vec<T>>::deserialize(d)?.unwrap_or_default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DocQuality {
    FullyOrganized,
    SemiOrganized,
    Unorganized,
}

impl DocQuality {
    pub const ALL: [DocQuality; 3] = [DocQuality::FullyOrganized, DocQuality::SemiOrganized, DocQuality::Unorganized];

    pub fn label(self) -> &'static str {
        match self {
            DocQuality::FullyOrganized => "Fully Organized",
            DocQuality::SemiOrganized => "Semi-Organized",
            DocQuality::Unorganized => "Unorganized",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        let key: String = label.chars().filter(|c| c.is_ascii_alphabetic()).collect::<String>().to_lowercase();
        match key.as_str() {
            "fullyorganized" => Some(DocQuality::FullyOrganized),
            "semiorganized" => Some(DocQuality::SemiOrganized),
            "unorganized" => Some(DocQuality::Unorganized),
            _ => None,
        }
    }
}

impl fmt::Display for DocQuality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityAssessment {
    pub quality: DocQuality,
    pub analysis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiDocument {
    pub title: Option<String>,
    pub endpoints: Vec<EndpointSpec>,
    pub source_id: String,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub quality: Option<DocQuality>,
}

impl ApiDocument {
    pub fn endpoint(&self, name: &str) -> Option<&EndpointSpec> {
        self.endpoints.iter().find(|e| e.name == name)
    }

    /// Endpoints whose URL cannot be made absolute with this document alone.
    pub fn unresolved_endpoints(&self) -> impl Iterator<Item = &EndpointSpec> {
        self.endpoints.iter().filter(move |e| self.base_url.is_none() && e.has_relative_url())
    }

    pub fn file_name(&self) -> String {
        format!("{}.api.json", self.source_id)
    }
}

pub fn is_absolute_url(url: &str) -> bool {
    let lower = url.trim().to_ascii_lowercase();
    ["http://", "https://"].iter().any(|s| lower.strip_prefix(s).is_some_and(|rest| !rest.is_empty() && !rest.starts_with('/')))
}

/// `scheme://authority` prefix of an absolute URL.
pub fn url_origin(url: &str) -> Option<String> {
    if !is_absolute_url(url) {
        return None;
    }
    let url = url.trim();
    let scheme_end = url.find("://")? + 3;
    let rest = &url[scheme_end..];
    let end = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    Some(format!("{}{}", &url[..scheme_end], &rest[..end]))
}

/// Collapse a doubled scheme such as `http://http://host`.
pub fn collapse_double_scheme(url: &str) -> String {
    let mut out = url.trim().to_string();
    loop {
        let lower = out.to_ascii_lowercase();
        let mut changed = false;
        for outer in ["http://", "https://"] {
            for inner in ["http://", "https://"] {
                if lower.starts_with(&format!("{outer}{inner}")) {
                    out = out[outer.len()..].to_string();
                    changed = true;
                }
            }
        }
        if !changed {
            return out;
        }
    }
}

// ---------------------------------------------------------------------------
// Loading

pub fn slugify(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    let trimmed = out.trim_end_matches('_').to_string();
    if trimmed.is_empty() {
        "doc".into()
    } else {
        trimmed
    }
}

fn media_for_extension(ext: &str) -> Option<Media> {
    match ext.to_ascii_lowercase().as_str() {
        "html" | "htm" | "xhtml" => Some(Media::Html),
        "md" | "markdown" | "txt" => Some(Media::Markdown),
        _ => None,
    }
}

fn sniff_media(body: &str) -> Media {
    let head: String = body.trim_start().chars().take(512).collect::<String>().to_ascii_lowercase();
    if head.starts_with("<!doctype html") || head.starts_with("<html") || head.contains("<body") {
        Media::Html
    } else {
        Media::Markdown
    }
}

/// Load a documentation page from a file path or an http(s) URL.
pub async fn load_document(origin: &str) -> Result<RawDocument, IngestError> {
    let io_err = |reason: String| IngestError::IoFailure { origin: origin.to_string(), reason };
    let (bytes, declared, source_id) = if is_absolute_url(origin) {
        let resp = reqwest::get(origin).await.map_err(|e| io_err(e.to_string()))?;
        let content_type = resp.headers().get(reqwest::header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("").to_ascii_lowercase();
        let declared = if content_type.contains("html") {
            Some(Media::Html)
        } else if content_type.contains("markdown") || content_type.starts_with("text/plain") {
            Some(Media::Markdown)
        } else if content_type.is_empty() {
            None
        } else {
            return Err(IngestError::UnsupportedMedia(origin.to_string()));
        };
        let bytes = resp.bytes().await.map_err(|e| io_err(e.to_string()))?.to_vec();
        let trimmed = origin.split_once("://").map(|(_, r)| r).unwrap_or(origin);
        (bytes, declared, slugify(trimmed))
    } else {
        let path = Path::new(origin);
        let declared = match path.extension().and_then(|e| e.to_str()) {
            Some(ext) => Some(media_for_extension(ext).ok_or_else(|| IngestError::UnsupportedMedia(origin.to_string()))?),
            None => None,
        };
        let bytes = std::fs::read(path).map_err(|e| io_err(e.to_string()))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("doc");
        (bytes, declared, slugify(stem))
    };
    let text = String::from_utf8_lossy(&bytes).into_owned();
    if text.trim().is_empty() {
        return Err(io_err("empty body".into()));
    }
    let media = declared.unwrap_or_else(|| sniff_media(&text));
    let doc = RawDocument::from_text(&source_id, origin, media, &text);
    if doc.body.trim().is_empty() {
        return Err(io_err("no visible text".into()));
    }
    Ok(doc)
}

/// Convert HTML to visible text. Script, style and comments are dropped,
/// table rows become `| a | b |` lines, headings become `#` lines.
pub fn html_to_text(html: &str) -> String {
    let strip = Regex::new(
        r"(?is)<!--.*?-->|<![a-zA-Z][^>]*>|<script\b.*?</script\s*>|<style\b.*?</style\s*>|<noscript\b.*?</noscript\s*>|<head\b.*?</head\s*>",
    )
    .expect("static regex");
    let cleaned = strip.replace_all(html, "");
    let tag = Regex::new(r"(?s)<(/?)([a-zA-Z][a-zA-Z0-9]*)[^>]*?>").expect("static regex");

    let mut out = String::new();
    let mut in_pre = false;
    let mut last = 0;
    for cap in tag.captures_iter(&cleaned) {
        let m = cap.get(0).expect("whole match");
        push_text(&mut out, &cleaned[last..m.start()], in_pre);
        last = m.end();
        let closing = !cap[1].is_empty();
        let name = cap[2].to_ascii_lowercase();
        match (name.as_str(), closing) {
            ("pre", false) => {
                in_pre = true;
                out.push('\n');
            }
            ("pre", true) => {
                in_pre = false;
                out.push('\n');
            }
            ("tr", false) => out.push_str("\n|"),
            ("tr", true) => out.push('\n'),
            ("td" | "th", false) => out.push(' '),
            ("td" | "th", true) => out.push_str(" |"),
            ("li", false) => out.push_str("\n- "),
            ("br", _) => out.push('\n'),
            (h, false) if h.len() == 2 && h.starts_with('h') && h.as_bytes()[1].is_ascii_digit() => {
                let level = (h.as_bytes()[1] - b'0') as usize;
                out.push('\n');
                out.push_str(&"#".repeat(level.clamp(1, 6)));
                out.push(' ');
            }
            (
                "p" | "div" | "section" | "article" | "header" | "footer" | "table" | "ul" | "ol" | "h1" | "h2" | "h3" | "h4" | "h5" | "h6"
                | "blockquote" | "dl" | "dt" | "dd",
                _,
            ) => out.push('\n'),
            _ => {}
        }
    }
    push_text(&mut out, &cleaned[last..], in_pre);

    let mut lines: Vec<String> = Vec::new();
    for line in out.lines() {
        let line = line.trim_end();
        let line = if line.trim_start().starts_with('|') { line.trim_start() } else { line };
        if line.trim().is_empty() {
            if lines.last().is_some_and(|l| !l.is_empty()) {
                lines.push(String::new());
            }
        } else {
            lines.push(line.to_string());
        }
    }
    lines.join("\n").trim().to_string()
}

fn push_text(out: &mut String, raw: &str, in_pre: bool) {
    let decoded = decode_entities(raw);
    if in_pre {
        out.push_str(&decoded);
        return;
    }
    let mut prev_space = out.ends_with([' ', '\n']);
    for c in decoded.chars() {
        if c.is_whitespace() {
            if !prev_space {
                out.push(' ');
                prev_space = true;
            }
        } else {
            out.push(c);
            prev_space = false;
        }
    }
}

fn decode_entities(text: &str) -> String {
    if !text.contains('&') {
        return text.to_string();
    }
    let entity = Regex::new(r"&(#[0-9]+|#[xX][0-9a-fA-F]+|[a-zA-Z]+);").expect("static regex");
    entity
        .replace_all(text, |c: &regex::Captures<'_>| {
            let body = &c[1];
            let decoded = if let Some(hex) = body.strip_prefix("#x").or_else(|| body.strip_prefix("#X")) {
                u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
            } else if let Some(dec) = body.strip_prefix('#') {
                dec.parse().ok().and_then(char::from_u32)
            } else {
                match body {
                    "amp" => Some('&'),
                    "lt" => Some('<'),
                    "gt" => Some('>'),
                    "quot" => Some('"'),
                    "apos" => Some('\''),
                    "nbsp" => Some(' '),
                    _ => None,
                }
            };
            decoded.map(String::from).unwrap_or_else(|| c[0].to_string())
        })
        .into_owned()
}

// ---------------------------------------------------------------------------
// Oracle-backed operations

#[derive(Debug, Deserialize)]
struct ContentVerdict {
    has_api_content: bool,
}

pub async fn has_api_content(gw: &OracleGateway, doc: &RawDocument) -> Result<bool, IngestError> {
    if doc.body.trim().is_empty() {
        return Ok(false);
    }
    let prompt = prompts::render(prompts::CONTENT_FILTER, &[("document", &doc.body)]);
    let req = OracleRequest::new(TaskKind::DocQuality, prompt)?.with_schema(prompts::content_filter_schema());
    let value = gw.complete(&req).await?.into_json()?;
    let verdict: ContentVerdict = serde_json::from_value(value).map_err(|e| OracleError::MalformedResponse(format!("content filter: {e}")))?;
    Ok(verdict.has_api_content)
}

pub const ANALYSIS_LIMIT: usize = 300;

pub async fn classify_doc_quality(gw: &OracleGateway, doc: &RawDocument) -> Result<QualityAssessment, IngestError> {
    let prompt = prompts::render(prompts::DOC_QUALITY, &[("document", &doc.body)]);
    let req = OracleRequest::new(TaskKind::DocQuality, prompt)?.with_schema(prompts::doc_quality_schema());
    let value = gw.complete(&req).await?.into_json()?;
    let category = value.get("category").and_then(Value::as_str).unwrap_or_default();
    let quality = DocQuality::from_label(category).ok_or_else(|| IngestError::UnparseableLabel(category.to_string()))?;
    let analysis: String = value.get("analysis").and_then(Value::as_str).unwrap_or_default().chars().take(ANALYSIS_LIMIT).collect();
    Ok(QualityAssessment { quality, analysis })
}

/// Check a raw extraction against the schema, collecting every violation.
pub fn validate_api_json(value: &Value) -> Result<(Option<String>, Vec<EndpointSpec>), Vec<String>> {
    let mut errs = Vec::new();
    let Some(obj) = value.as_object() else {
        return Err(vec!["top level must be an object".into()]);
    };
    let title = match obj.get("title") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            errs.push("title must be a string or null".into());
            None
        }
    };
    let endpoints = match obj.get("endpoints") {
        Some(Value::Array(a)) if !a.is_empty() => a.as_slice(),
        Some(Value::Array(_)) => {
            errs.push("endpoints must not be empty".into());
            &[]
        }
        _ => {
            errs.push("endpoints must be an array".into());
            &[]
        }
    };
    for (i, ep) in endpoints.iter().enumerate() {
        check_endpoint(ep, &format!("endpoints[{i}]"), &mut errs);
    }
    if !errs.is_empty() {
        return Err(errs);
    }
    let parsed: Vec<EndpointSpec> = match serde_json::from_value(Value::Array(endpoints.to_vec())) {
        Ok(v) => v,
        Err(e) => return Err(vec![e.to_string()]),
    };
    let parsed = parsed
        .into_iter()
        .map(|mut e| {
            e.method = e.method.trim().to_ascii_uppercase();
            e.url = e.url.iter().map(|u| collapse_double_scheme(u)).collect();
            e
        })
        .collect();
    Ok((title, parsed))
}

fn check_endpoint(ep: &Value, at: &str, errs: &mut Vec<String>) {
    let Some(obj) = ep.as_object() else {
        errs.push(format!("{at} must be an object"));
        return;
    };
    match obj.get("name").and_then(Value::as_str) {
        Some(n) if !n.trim().is_empty() => {}
        _ => errs.push(format!("{at}.name must be a non-empty string")),
    }
    match obj.get("description") {
        None | Some(Value::Null) | Some(Value::String(_)) => {}
        _ => errs.push(format!("{at}.description must be a string or null")),
    }
    match obj.get("method").and_then(Value::as_str) {
        Some(m) if HTTP_METHODS.contains(&m.trim().to_ascii_uppercase().as_str()) => {}
        _ => errs.push(format!("{at}.method must be one of {}", HTTP_METHODS.join(", "))),
    }
    match obj.get("url") {
        Some(Value::String(s)) if !s.trim().is_empty() => {}
        Some(Value::Array(a)) if !a.is_empty() && a.iter().all(|u| u.as_str().is_some_and(|s| !s.trim().is_empty())) => {}
        _ => errs.push(format!("{at}.url must be a non-empty string or list of strings")),
    }
    match obj.get("headers") {
        None | Some(Value::Null) | Some(Value::Array(_)) => {}
        _ => errs.push(format!("{at}.headers must be a list")),
    }
    for key in ["required_parameters", "optional_parameters"] {
        match obj.get(key) {
            None | Some(Value::Null) => {}
            Some(Value::Array(params)) => {
                for (j, p) in params.iter().enumerate() {
                    check_parameter(p, &format!("{at}.{key}[{j}]"), errs);
                }
            }
            _ => errs.push(format!("{at}.{key} must be a list")),
        }
    }
}

fn check_parameter(p: &Value, at: &str, errs: &mut Vec<String>) {
    let Some(obj) = p.as_object() else {
        errs.push(format!("{at} must be an object"));
        return;
    };
    match obj.get("name").and_then(Value::as_str) {
        Some(n) if !n.trim().is_empty() => {}
        _ => errs.push(format!("{at}.name must be a non-empty string")),
    }
    for key in ["type", "description"] {
        match obj.get(key) {
            None | Some(Value::Null) | Some(Value::String(_)) => {}
            _ => errs.push(format!("{at}.{key} must be a string or null")),
        }
    }
    if matches!(obj.get("example"), Some(Value::Array(_) | Value::Object(_))) {
        errs.push(format!("{at}.example must be a scalar or string"));
    }
}

/// Pick a base URL: the origin of the first absolute endpoint URL, else the
/// host the document was fetched from. Local files leave it absent.
pub fn recover_base_url(endpoints: &[EndpointSpec], origin: &str) -> Option<String> {
    endpoints.iter().flat_map(|e| e.url.iter()).find_map(|u| url_origin(u)).or_else(|| url_origin(origin))
}

pub async fn extract_api_json(gw: &OracleGateway, doc: &RawDocument) -> Result<ApiDocument, IngestError> {
    let prompt = prompts::render(prompts::EXTRACT, &[("document", &doc.body)]);
    let req = OracleRequest::new(TaskKind::Extract, prompt.clone())?.with_schema(prompts::extract_schema());
    let first = gw.complete(&req).await?.into_json()?;
    let (title, endpoints) = match validate_api_json(&first) {
        Ok(ok) => ok,
        Err(violations) => {
            tracing::info!(source = %doc.source_id, ?violations, "re-asking extraction");
            let retry = format!("{prompt}{}", prompts::render(prompts::EXTRACT_RETRY_SUFFIX, &[("violations", &violations.join("\n"))]));
            let req = OracleRequest::new(TaskKind::Extract, retry)?.with_schema(prompts::extract_schema());
            let second = gw.complete(&req).await?.into_json()?;
            validate_api_json(&second).map_err(IngestError::SchemaViolation)?
        }
    };
    let base_url = recover_base_url(&endpoints, &doc.origin);
    Ok(ApiDocument { title, endpoints, source_id: doc.source_id.clone(), base_url, quality: None })
}
