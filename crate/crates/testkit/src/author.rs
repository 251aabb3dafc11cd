//! A deterministic stand-in for the language model. It recognises corpus
//! pages inside prompts and answers with the authored fixture data, and
//! revises tools the way a competent model would: by plugging the first
//! offered candidate value into the example call.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use doc2tool_core::executor::InvocationRecord;
use doc2tool_core::exporter::{parse_call_args, py_ident, py_str};
use doc2tool_core::oracles::{Completion, CompletionBackend, OracleError, OracleRequest, ScriptedBackend, TaskKind};
use doc2tool_core::validator::RuleJudge;
use serde_json::{json, Value};

use crate::corpus::{Corpus, FixtureDoc};

const CONTENT_FILTER_LEAD: &str = "You are screening documentation pages";
const RETRY_MARK: &str = "Your previous answer did not satisfy the schema";

#[derive(Debug, Clone)]
pub struct ScriptAuthor {
    corpus: Corpus,
}

impl ScriptAuthor {
    pub fn new(corpus: Corpus) -> Self {
        Self { corpus }
    }

    fn doc_by_marker(&self, prompt: &str) -> Option<&FixtureDoc> {
        self.corpus.all().find(|d| prompt.contains(&d.marker))
    }

    fn doc_by_source(&self, prompt: &str) -> Option<&FixtureDoc> {
        self.corpus.docs.iter().find(|d| prompt.contains(&format!("\"source_id\": \"{}\"", d.id)))
    }

    fn doc_by_title(&self, prompt: &str) -> Option<&FixtureDoc> {
        self.corpus.docs.iter().find(|d| d.title().is_some_and(|t| prompt.contains(&format!("\"title\": {}", Value::String(t.to_string())))))
    }

    fn answer(&self, req: &OracleRequest) -> Result<Completion, String> {
        let p = req.prompt.as_str();
        match req.task_kind {
            TaskKind::DocQuality if p.starts_with(CONTENT_FILTER_LEAD) => {
                let has = self.doc_by_marker(p).is_some_and(|d| d.has_api);
                let reason = if has { "The page documents callable endpoints." } else { "The page only links to other pages." };
                Ok(Completion::Structured(json!({"has_api_content": has, "reason": reason})))
            }
            TaskKind::DocQuality => {
                let d = self.doc_by_marker(p).ok_or("unknown page")?;
                Ok(Completion::Structured(json!({"analysis": d.analysis, "category": d.quality.label()})))
            }
            TaskKind::Extract => {
                let d = self.doc_by_marker(p).ok_or("unknown page")?;
                let answer = match (&d.bad_first_extraction, p.contains(RETRY_MARK)) {
                    (Some(bad), false) => bad.clone(),
                    _ => d.extraction.clone().ok_or("page has no API")?,
                };
                Ok(Completion::Structured(answer))
            }
            TaskKind::Fingerprint => {
                let fps = self.doc_by_source(p).map(|d| d.fingerprints.clone()).unwrap_or_default();
                Ok(Completion::Structured(json!({ "fingerprints": fps })))
            }
            TaskKind::Judge => Ok(Completion::Structured(json!({ "response_type": judge_answer(p) }))),
            TaskKind::Refine => {
                let tamper = self.doc_by_title(p).is_some_and(|d| d.tamper);
                revise(p, tamper).map(Completion::Text)
            }
            TaskKind::ParamGuess => Ok(Completion::Text(self.guess(p))),
        }
    }

    fn guess(&self, prompt: &str) -> String {
        let param = section(prompt, "Parameter Description:\n", ":").unwrap_or_default();
        let history: Vec<&str> = section(prompt, "***history start\n", "***history end").unwrap_or_default().lines().map(str::trim).collect();
        self.corpus
            .docs
            .iter()
            .filter_map(|d| d.guesses.get(param.trim()))
            .flatten()
            .find(|g| !history.contains(&g.as_str()))
            .cloned()
            .unwrap_or_else(|| "example".into())
    }
}

#[async_trait]
impl CompletionBackend for ScriptAuthor {
    async fn complete(&self, request: &OracleRequest) -> Result<Completion, OracleError> {
        self.answer(request).map_err(|e| OracleError::MalformedResponse(format!("script author ({}): {e}", request.task_kind)))
    }
}

fn section<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    Some(&rest[..rest.find(end).unwrap_or(rest.len())])
}

fn judge_answer(prompt: &str) -> &'static str {
    let response = section(prompt, "API Response: status ", "\nCode: ").unwrap_or("");
    let (status, body) = response.split_once(": ").unwrap_or((response, ""));
    let rec = match status.trim().parse::<u16>() {
        Ok(s) => InvocationRecord::from_response(s, body.as_bytes(), false, "", Default::default(), 0),
        Err(_) => InvocationRecord::transport_failure("", Default::default(), 0, "no response".into()),
    };
    match RuleJudge::classify(&rec) {
        doc2tool_core::validator::JudgeClassification::Information => "information",
        doc2tool_core::validator::JudgeClassification::CodeError => "code_error",
        doc2tool_core::validator::JudgeClassification::ServerError => "server_error",
        doc2tool_core::validator::JudgeClassification::RequestError => "request_error",
    }
}

/// Rewrite the example call with the first candidate of each parameter, or
/// wrap the capture in a silent handler when tampering.
fn revise(prompt: &str, tamper: bool) -> Result<String, String> {
    let code = section(prompt, "Code to fix:\n", "\n\nCandidate Parameter Values:\n").ok_or("no code in prompt")?;
    let listing: BTreeMap<String, Vec<Value>> =
        section(prompt, "Candidate Parameter Values:\n", "\u{0}").and_then(|t| serde_json::from_str(t.trim()).ok()).unwrap_or_default();
    let mut lines: Vec<String> = code.lines().map(String::from).collect();
    let idx = lines.iter().position(|l| l.starts_with("    r = ")).ok_or("no example call")?;
    if tamper {
        let call = lines[idx].trim().to_string();
        lines[idx] = format!("    try:\n        {call}\n    except Exception:\n        pass");
        return Ok(lines.join("\n") + "\n");
    }
    let call = lines[idx]["    r = ".len()..].to_string();
    let open = call.find('(').ok_or("malformed call")?;
    let name = &call[..open];
    let inner = call[open + 1..].strip_suffix(')').ok_or("malformed call")?;
    let mut args = parse_call_args(inner).map_err(|e| e.to_string())?;
    for (param, values) in &listing {
        let Some(first) = values.first() else { continue };
        let value = match first {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let ident = py_ident(param);
        match args.iter_mut().find(|(k, _)| *k == ident) {
            Some(slot) => slot.1 = Some(value),
            None => args.push((ident, Some(value))),
        }
    }
    let rendered: Vec<String> = args.iter().map(|(k, v)| format!("{k}={}", v.as_deref().map(py_str).unwrap_or_else(|| "None".into()))).collect();
    lines[idx] = format!("    r = {name}({})", rendered.join(", "));
    Ok(lines.join("\n") + "\n")
}

/// Wraps a backend and keeps every answer, keyed like scripted fixtures.
pub struct RecordingBackend {
    inner: Arc<dyn CompletionBackend>,
    recorded: Mutex<ScriptedBackend>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn CompletionBackend>) -> Self {
        Self { inner, recorded: Mutex::new(ScriptedBackend::new()) }
    }

    pub fn recorded(&self) -> ScriptedBackend {
        self.recorded.lock().expect("recording lock").clone()
    }
}

#[async_trait]
impl CompletionBackend for RecordingBackend {
    async fn complete(&self, request: &OracleRequest) -> Result<Completion, OracleError> {
        let answer = self.inner.complete(request).await?;
        self.recorded.lock().expect("recording lock").insert_digest(request.task_kind, request.digest(), answer.clone());
        Ok(answer)
    }
}
