//! Refinement loop: ask the code-fixing oracle for a revised tool source,
//! guard the protected harness, re-parse into the IR and re-validate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::compiler::{ToolSpec, ToolStatus};
use crate::docingest::{url_origin, ApiDocument};
use crate::executor::bind_strings;
use crate::exporter::{digest_text, emit_executable_tool, harness_region, parse_tool_source, HARNESS_BEGIN, HARNESS_END};
use crate::oracles::{Completion, OracleError, OracleGateway, OracleRequest, TaskKind};
use crate::paramkb::{InferMode, KbError, KbView, ParamCandidate, ParamKb, ParamQuery};
use crate::prompts;
use crate::validator::{ErrorLabel, ValidationAttempt, ValidationOutcome, Validator};

pub const DEFAULT_MAX_ROUNDS: u32 = 3;
pub const GUESS_HISTORY_CAP: usize = 5;
const ERROR_BODY_EXCERPT: usize = 600;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("revision rejected by harness guard: {0}")]
    GuardViolation(String),
    #[error("revision cannot be parsed: {0}")]
    UnparseableRevision(String),
    #[error("round {round} exceeds budget {max}")]
    RoundBudget { round: u32, max: u32 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub param: String,
    pub candidates: Vec<ParamCandidate>,
    /// Values proposed by the parameter-guess oracle when the KB had none.
    #[serde(default)]
    pub guesses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTicket {
    pub tool_id: String,
    pub round: u32,
    pub input_label: ErrorLabel,
    pub candidates: Vec<CandidateSet>,
    pub error_info: String,
    pub doc_excerpt: String,
    pub prior_source_digest: String,
}

impl RefinementTicket {
    /// `{"param": ["value", ...]}` listing, KB candidates before guesses.
    pub fn candidate_listing(&self) -> Value {
        let mut m = serde_json::Map::new();
        for set in &self.candidates {
            let values: Vec<Value> = set.candidates.iter().map(|c| json!(c.value)).chain(set.guesses.iter().map(|g| json!(g))).collect();
            m.insert(set.param.clone(), Value::Array(values));
        }
        Value::Object(m)
    }
}

// ---------------------------------------------------------------------------
// Harness guard

const FORBIDDEN_ANYWHERE: [&str; 9] =
    ["contextlib", "suppress(", "builtins", "sys.excepthook", "def print", "print =", "json.dumps =", "json =", "os._exit"];

/// Accept iff the protected region hashes to the original digest and the
/// revision adds nothing that could swallow or fake the capture.
pub fn guard_check(original: &ToolSpec, source: &str) -> Result<(), String> {
    let region = harness_region(source).ok_or("harness markers missing, duplicated or out of order")?;
    if digest_text(&region) != original.harness_digest {
        return Err("protected region content changed".into());
    }
    let lines: Vec<&str> = source.split('\n').collect();
    let begin = lines.iter().position(|l| l.trim() == HARNESS_BEGIN.trim()).expect("region found");
    let end = lines.iter().position(|l| l.trim() == HARNESS_END.trim()).expect("region found");
    if lines[begin] != HARNESS_BEGIN || lines[end].trim_end() != HARNESS_END {
        return Err("harness markers moved".into());
    }
    for token in FORBIDDEN_ANYWHERE {
        if lines.iter().enumerate().any(|(i, l)| (i <= begin || i >= end) && l.replace(' ', "").contains(&token.replace(' ', ""))) {
            return Err(format!("forbidden construct `{token}`"));
        }
    }
    let main = lines.iter().rposition(|l| l.starts_with("if __name__ ==")).ok_or("no __main__ block")?;
    if main > begin {
        return Err("harness is not inside the __main__ block".into());
    }
    if lines.iter().filter(|l| l.starts_with("if __name__ ==")).count() != 1 {
        return Err("more than one __main__ block".into());
    }
    let mut statements = 0;
    for (i, l) in lines.iter().enumerate().skip(main + 1) {
        if (begin..=end).contains(&i) {
            continue;
        }
        let t = l.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if i > end {
            return Err("code after the protected region".into());
        }
        if !l.starts_with("    r = ") || l.starts_with("     ") {
            return Err(format!("unexpected statement in __main__: {t}"));
        }
        statements += 1;
    }
    if statements != 1 {
        return Err("__main__ must make exactly one tool call before the harness".into());
    }
    for l in &lines[..main] {
        let t = l.trim_start();
        if !l.starts_with(' ') && (t.starts_with("try:") || t.starts_with("except") || t.starts_with("with ")) {
            return Err("module-level exception handling".into());
        }
    }
    Ok(())
}

pub fn guard_harness(original: &ToolSpec, source: &str) -> bool {
    guard_check(original, source).is_ok()
}

fn strip_code_fences(text: &str) -> String {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map_or("", |(_, r)| r);
        let rest = rest.trim_end();
        return rest.strip_suffix("```").unwrap_or(rest).to_string();
    }
    text.to_string()
}

// ---------------------------------------------------------------------------
// Tickets and single rounds

/// The documentation slice for a tool: its source endpoint plus base URL.
pub fn doc_excerpt(tool: &ToolSpec, doc: Option<&ApiDocument>) -> String {
    let Some(doc) = doc else { return String::from("{}") };
    let endpoints: Vec<&crate::docingest::EndpointSpec> = match doc.endpoint(&tool.source.endpoint) {
        Some(ep) => vec![ep],
        None => doc.endpoints.iter().collect(),
    };
    serde_json::to_string_pretty(&json!({ "title": doc.title, "base_url": doc.base_url, "endpoints": endpoints })).expect("serializable")
}

/// Deterministic error description: logical URL, status, body excerpt and
/// labels of the previous attempts.
pub fn error_info(tool: &ToolSpec, attempts: &[ValidationAttempt]) -> String {
    let mut out = String::new();
    let Some(last) = attempts.last() else { return out };
    out.push_str(&format!("Label: {}\n", last.label.title()));
    if let Some(note) = &last.note {
        let note = if note.starts_with("unjudged") || last.record.is_none() { note.clone() } else { String::new() };
        if !note.is_empty() {
            out.push_str(&format!("Detail: {note}\n"));
        }
    }
    if let Some(binding) = &tool.example_binding {
        if let Some(url) = bind_strings(tool, binding).request_url {
            out.push_str(&format!("Request: {} {url}\n", tool.method));
        }
    }
    if let Some(rec) = &last.record {
        match rec.status_code {
            Some(s) => out.push_str(&format!("Status: {s}\n")),
            None => out.push_str("Status: no response (transport failure)\n"),
        }
        let body: String = rec.text.chars().take(ERROR_BODY_EXCERPT).collect();
        out.push_str(&format!("Response: {body}\n"));
    }
    if let Some(j) = last.judgment {
        out.push_str(&format!("Judgment: {}\n", serde_json::to_value(j).expect("enum").as_str().unwrap_or_default()));
    }
    if attempts.len() > 1 {
        let prior: Vec<String> = attempts[..attempts.len() - 1].iter().map(|a| format!("round {}: {}", a.round, a.label)).collect();
        out.push_str(&format!("Previous attempts: {}\n", prior.join("; ")));
    }
    out
}

fn params_needing_values(tool: &ToolSpec, label: ErrorLabel) -> Vec<String> {
    let binding = tool.example_binding.clone().unwrap_or_default();
    match label {
        ErrorLabel::NoParameterValue => {
            tool.required_params().filter(|p| !binding.contains_key(&p.name) && p.default.is_none()).map(|p| p.name.clone()).collect()
        }
        ErrorLabel::WrongParameterValue => tool.required_params().map(|p| p.name.clone()).collect(),
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GuessHistory(pub BTreeMap<String, Vec<String>>);

impl GuessHistory {
    pub fn record(&mut self, param: &str, value: &str) {
        let h = self.0.entry(param.to_string()).or_default();
        if !h.iter().any(|v| v == value) {
            h.push(value.to_string());
        }
    }

    pub fn tried(&self, param: &str) -> &[String] {
        self.0.get(param).map(Vec::as_slice).unwrap_or(&[])
    }

    /// At most the last [`GUESS_HISTORY_CAP`] values.
    pub fn recent(&self, param: &str) -> &[String] {
        let t = self.tried(param);
        &t[t.len().saturating_sub(GUESS_HISTORY_CAP)..]
    }
}

async fn guess_value(gateway: &OracleGateway, tool: &ToolSpec, param: &str, history: &GuessHistory) -> Result<Option<String>, OracleError> {
    let p = tool.param(param);
    let param_description = format!(
        "{}: {} (type: {})",
        param,
        p.and_then(|p| p.description.as_deref()).unwrap_or("no description"),
        p.and_then(|p| p.param_type.as_deref()).unwrap_or("unknown")
    );
    let prompt = prompts::render(
        prompts::PARAM_GUESS,
        &[("history", &history.recent(param).join("\n")), ("description", tool.description.as_str()), ("param_description", &param_description)],
    );
    let text = gateway.complete(&OracleRequest::new(TaskKind::ParamGuess, prompt)?).await?.into_text();
    let value = text.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`').trim().to_string();
    Ok((!value.is_empty() && !history.tried(param).contains(&value)).then_some(value))
}

/// Build the ticket for `round`. KB candidates are offered only for missing
/// or wrong parameter values; values already tried are filtered out.
pub async fn build_ticket(
    gateway: &OracleGateway,
    kb: &KbView<'_>,
    tool: &ToolSpec,
    doc: Option<&ApiDocument>,
    attempts: &[ValidationAttempt],
    round: u32,
    history: &GuessHistory,
) -> Result<RefinementTicket, RefineError> {
    let input_label = attempts.last().map(|a| a.label).unwrap_or(ErrorLabel::AbnormalResponse);
    let mut candidates = Vec::new();
    for param in params_needing_values(tool, input_label) {
        let Some(p) = tool.param(&param) else { continue };
        let q = ParamQuery::for_param(tool, p);
        let found: Vec<ParamCandidate> =
            kb.infer_candidates(&q, InferMode::TopK).await?.into_iter().filter(|c| !history.tried(&param).contains(&c.value)).collect();
        let guesses = if found.is_empty() { guess_value(gateway, tool, &param, history).await?.into_iter().collect() } else { Vec::new() };
        candidates.push(CandidateSet { param, candidates: found, guesses });
    }
    Ok(RefinementTicket {
        tool_id: tool.tool_id.clone(),
        round,
        input_label,
        candidates,
        error_info: error_info(tool, attempts),
        doc_excerpt: doc_excerpt(tool, doc),
        prior_source_digest: digest_text(&emit_executable_tool(tool)),
    })
}

pub fn refine_prompt(tool: &ToolSpec, ticket: &RefinementTicket) -> String {
    let config = json!({
        "base_url": url_origin(&tool.url_template),
        "method": tool.method,
        "headers": {},
    });
    let code = emit_executable_tool(tool);
    prompts::render(
        prompts::REFINE,
        &[
            ("error", ticket.error_info.as_str()),
            ("api_doc", ticket.doc_excerpt.as_str()),
            ("config", &serde_json::to_string_pretty(&config).expect("json")),
            ("code", &code),
            ("params", &serde_json::to_string_pretty(&ticket.candidate_listing()).expect("json")),
        ],
    )
}

/// One refinement round: oracle revision, guard, re-parse.
pub async fn refine_once(
    gateway: &OracleGateway,
    tool: &ToolSpec,
    ticket: &RefinementTicket,
    max_rounds: u32,
) -> Result<(ToolSpec, String), RefineError> {
    if ticket.round == 0 || ticket.round > max_rounds {
        return Err(RefineError::RoundBudget { round: ticket.round, max: max_rounds });
    }
    let req = OracleRequest::new(TaskKind::Refine, refine_prompt(tool, ticket))?;
    let source = match gateway.complete(&req).await? {
        Completion::Text(t) => strip_code_fences(&t),
        Completion::Structured(Value::String(t)) => strip_code_fences(&t),
        Completion::Structured(v) => v.get("code").and_then(Value::as_str).map(strip_code_fences).unwrap_or_default(),
    };
    guard_check(tool, &source).map_err(RefineError::GuardViolation)?;
    let mut revised = parse_tool_source(&source, tool).map_err(|e| RefineError::UnparseableRevision(e.0))?;
    revised.status = ToolStatus::Unvalidated;
    revised.harness_digest = tool.harness_digest.clone();
    Ok((revised, source))
}

// ---------------------------------------------------------------------------
// Loop

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRound {
    pub round: u32,
    pub ticket: RefinementTicket,
    #[serde(default)]
    pub revision_digest: Option<String>,
    #[serde(default)]
    pub label: Option<ErrorLabel>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTranscript {
    pub tool_id: String,
    pub initial_label: ErrorLabel,
    pub rounds: Vec<TranscriptRound>,
    pub final_label: ErrorLabel,
}

impl RefinementTranscript {
    pub fn file_name(&self) -> String {
        format!("{}.refine.json", self.tool_id)
    }
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    /// The passing revision, or the original tool marked failed.
    pub tool: ToolSpec,
    pub outcome: ValidationOutcome,
    pub transcript: RefinementTranscript,
    /// Parameter values of a passing revision, for the KB.
    pub successes: Vec<(ParamQuery, String)>,
    pub refine_calls: u32,
}

#[derive(Debug, Clone)]
pub struct Refiner {
    pub gateway: OracleGateway,
    pub validator: Validator,
    pub max_rounds: u32,
}

impl Refiner {
    pub fn new(gateway: OracleGateway, validator: Validator, max_rounds: u32) -> Self {
        Self { gateway, validator, max_rounds }
    }

    /// Alternate refine/validate until the tool passes or the budget runs out.
    /// KB reads use `kb` as a stable snapshot; successes are returned rather
    /// than written so that callers control write order.
    pub async fn refine_loop(&self, tool: &ToolSpec, initial: &ValidationOutcome, doc: Option<&ApiDocument>, kb: &KbView<'_>) -> RefineResult {
        let mut attempts = initial.attempts.clone();
        let mut transcript = RefinementTranscript {
            tool_id: tool.tool_id.clone(),
            initial_label: initial.final_label,
            rounds: Vec::new(),
            final_label: initial.final_label,
        };
        if initial.verified {
            let mut passed = tool.clone();
            passed.status = ToolStatus::Passed;
            return RefineResult { tool: passed, outcome: initial.clone(), transcript, successes: Vec::new(), refine_calls: 0 };
        }
        let mut history = GuessHistory::default();
        for (k, v) in tool.example_binding.iter().flatten() {
            history.record(k, v);
        }
        let mut current = tool.clone();
        let mut passing: Option<ToolSpec> = None;
        let mut calls = 0;
        for round in 1..=self.max_rounds {
            let ticket = match build_ticket(&self.gateway, kb, &current, doc, &attempts, round, &history).await {
                Ok(t) => t,
                Err(e) => {
                    tracing::warn!(tool = %tool.tool_id, round, error = %e, "cannot build refinement ticket");
                    break;
                }
            };
            calls += 1;
            let mut entry = TranscriptRound { round, ticket: ticket.clone(), revision_digest: None, label: None, error: None };
            match refine_once(&self.gateway, &current, &ticket, self.max_rounds).await {
                Ok((revised, source)) => {
                    entry.revision_digest = Some(digest_text(&source));
                    for (k, v) in revised.example_binding.iter().flatten() {
                        history.record(k, v);
                    }
                    let attempt = self.validator.attempt(&revised, round).await;
                    entry.label = Some(attempt.label);
                    let passed = attempt.label == ErrorLabel::PassedValidation;
                    attempts.push(attempt);
                    current = revised;
                    if passed {
                        transcript.rounds.push(entry);
                        passing = Some(current.clone());
                        break;
                    }
                }
                Err(e) => {
                    entry.error = Some(e.to_string());
                }
            }
            transcript.rounds.push(entry);
        }

        let outcome =
            if attempts.len() == initial.attempts.len() { initial.clone() } else { ValidationOutcome::from_attempts(&tool.tool_id, attempts) };
        transcript.final_label = outcome.final_label;
        let (final_tool, successes) = match passing {
            Some(mut t) => {
                t.status = ToolStatus::Passed;
                let successes = success_values(&t);
                (t, successes)
            }
            None => {
                let mut t = tool.clone();
                t.status = ToolStatus::Failed;
                (t, Vec::new())
            }
        };
        RefineResult { tool: final_tool, outcome, transcript, successes, refine_calls: calls }
    }
}

/// The example binding of a passing tool as KB queries and values.
pub fn success_values(tool: &ToolSpec) -> Vec<(ParamQuery, String)> {
    tool.example_binding.iter().flatten().filter_map(|(k, v)| tool.param(k).map(|p| (ParamQuery::for_param(tool, p), v.clone()))).collect()
}

/// Write successes from refinement into the KB. Returns how many were new.
pub async fn record_successes(kb: &mut ParamKb, results: &[RefineResult]) -> Result<usize, KbError> {
    let mut added = 0;
    for r in results {
        for (q, v) in &r.successes {
            if kb.record_success(q, v).await? {
                added += 1;
            }
        }
    }
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::osrm_tool;

    fn emitted() -> (ToolSpec, String) {
        let t = osrm_tool();
        let s = emit_executable_tool(&t);
        (t, s)
    }

    #[test]
    fn untouched_source_is_accepted() {
        let (t, s) = emitted();
        assert_eq!(guard_check(&t, &s), Ok(()));
        let changed = s.replace("service='route'", "service='nearest'");
        assert!(guard_harness(&t, &changed));
    }

    #[test]
    fn whitespace_edit_in_region_is_rejected() {
        let (t, s) = emitted();
        let tampered = s.replace("    r_json = None\n", "    r_json = None \n");
        assert!(!guard_harness(&t, &tampered));
    }

    #[test]
    fn silent_handler_around_capture_is_rejected() {
        let (t, s) = emitted();
        let tampered = s
            .replace("    r = general_request(", "    try:\n        r = general_request(")
            .replace("    # === END HARNESS ===\n", "    # === END HARNESS ===\n    except Exception:\n        pass\n");
        assert!(!guard_harness(&t, &tampered));
    }

    #[test]
    fn history_is_capped() {
        let mut h = GuessHistory::default();
        for i in 0..8 {
            h.record("p", &i.to_string());
        }
        assert_eq!(h.recent("p"), ["3", "4", "5", "6", "7"]);
    }

    #[test]
    fn fences_are_stripped() {
        assert_eq!(strip_code_fences("```python\nx = 1\n```"), "x = 1\n");
        assert_eq!(strip_code_fences("x = 1\n"), "x = 1\n");
    }
}
