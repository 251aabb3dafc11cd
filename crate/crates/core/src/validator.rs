//! Tool validation: invoke with the example binding, judge the response and
//! assign one of seven labels; aggregate labels into cause estimates.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::compiler::ToolSpec;
use crate::executor::{bind_strings, ExecError, Executor, InvocationRecord};
use crate::exporter::emit_executable_tool;
use crate::oracles::{Completion, OracleError, OracleGateway, OracleRequest, TaskKind};
use crate::prompts;

/// Bytes of response text shown to the judge.
pub const JUDGE_WINDOW: usize = 4096;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("judge answer is not a known response type: {0}")]
    UnparseableLabel(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorLabel {
    PassedValidation,
    FailedValidation,
    AbnormalResponse,
    MissingEndpointPath,
    #[serde(rename = "MissingBaseURL")]
    MissingBaseUrl,
    NoParameterValue,
    WrongParameterValue,
}

impl ErrorLabel {
    pub const ALL: [ErrorLabel; 7] = [
        ErrorLabel::PassedValidation,
        ErrorLabel::FailedValidation,
        ErrorLabel::AbnormalResponse,
        ErrorLabel::MissingEndpointPath,
        ErrorLabel::MissingBaseUrl,
        ErrorLabel::NoParameterValue,
        ErrorLabel::WrongParameterValue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorLabel::PassedValidation => "PassedValidation",
            ErrorLabel::FailedValidation => "FailedValidation",
            ErrorLabel::AbnormalResponse => "AbnormalResponse",
            ErrorLabel::MissingEndpointPath => "MissingEndpointPath",
            ErrorLabel::MissingBaseUrl => "MissingBaseURL",
            ErrorLabel::NoParameterValue => "NoParameterValue",
            ErrorLabel::WrongParameterValue => "WrongParameterValue",
        }
    }

    /// Human-readable name used in reports.
    pub fn title(self) -> &'static str {
        match self {
            ErrorLabel::PassedValidation => "Passed Validation",
            ErrorLabel::FailedValidation => "Failed Validation",
            ErrorLabel::AbnormalResponse => "Abnormal Response",
            ErrorLabel::MissingEndpointPath => "Missing Endpoint Path",
            ErrorLabel::MissingBaseUrl => "Missing Base URL",
            ErrorLabel::NoParameterValue => "No Parameter Value",
            ErrorLabel::WrongParameterValue => "Wrong Parameter Value",
        }
    }

    /// Closeness to passing, used to pick the outcome kept for a tool that
    /// never passed. Lower is closer.
    pub fn rank(self) -> u8 {
        match self {
            ErrorLabel::PassedValidation => 0,
            ErrorLabel::FailedValidation => 1,
            ErrorLabel::WrongParameterValue => 2,
            ErrorLabel::AbnormalResponse => 3,
            ErrorLabel::NoParameterValue => 4,
            ErrorLabel::MissingEndpointPath => 5,
            ErrorLabel::MissingBaseUrl => 6,
        }
    }
}

impl fmt::Display for ErrorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeClassification {
    Information,
    CodeError,
    ServerError,
    RequestError,
}

impl JudgeClassification {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '.').to_ascii_lowercase().as_str() {
            "information" | "pass" => Some(Self::Information),
            "code_error" => Some(Self::CodeError),
            "server_error" => Some(Self::ServerError),
            "request_error" => Some(Self::RequestError),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationAttempt {
    pub round: u32,
    pub label: ErrorLabel,
    #[serde(default)]
    pub judgment: Option<JudgeClassification>,
    #[serde(default)]
    pub record: Option<InvocationRecord>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub tool_id: String,
    pub attempts: Vec<ValidationAttempt>,
    pub final_label: ErrorLabel,
    pub verified: bool,
}

impl ValidationOutcome {
    /// Final label is the last attempt's when it passed, else the best-ranked
    /// label across all attempts.
    pub fn from_attempts(tool_id: &str, attempts: Vec<ValidationAttempt>) -> Self {
        assert!(!attempts.is_empty(), "an outcome needs at least one attempt");
        let last = attempts.last().expect("non-empty").label;
        let final_label = if last == ErrorLabel::PassedValidation {
            last
        } else {
            attempts.iter().map(|a| a.label).filter(|l| *l != ErrorLabel::PassedValidation).min_by_key(|l| l.rank()).unwrap_or(last)
        };
        Self { tool_id: tool_id.to_string(), attempts, final_label, verified: final_label == ErrorLabel::PassedValidation }
    }

    pub fn last_attempt(&self) -> &ValidationAttempt {
        self.attempts.last().expect("outcomes always have attempts")
    }
}

// ---------------------------------------------------------------------------
// Judges

#[async_trait]
pub trait Judge: Send + Sync {
    async fn judge(&self, tool: &ToolSpec, rec: &InvocationRecord) -> Result<JudgeClassification, ValidateError>;
}

/// Truncate to at most `limit` bytes on a char boundary.
pub fn judge_window(text: &str, limit: usize) -> &str {
    if text.len() <= limit {
        return text;
    }
    let mut end = limit;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}

pub fn judge_prompt(tool: &ToolSpec, rec: &InvocationRecord) -> String {
    let response = format!("status {}: {}", rec.status_code.map_or("none".into(), |s| s.to_string()), judge_window(&rec.text, JUDGE_WINDOW));
    prompts::render(prompts::JUDGE, &[("description", tool.description.as_str()), ("response", &response), ("code", &emit_executable_tool(tool))])
}

/// Judge backed by the completion oracle.
#[derive(Debug, Clone)]
pub struct OracleJudge {
    gateway: OracleGateway,
}

impl OracleJudge {
    pub fn new(gateway: OracleGateway) -> Self {
        Self { gateway }
    }
}

#[async_trait]
impl Judge for OracleJudge {
    async fn judge(&self, tool: &ToolSpec, rec: &InvocationRecord) -> Result<JudgeClassification, ValidateError> {
        let req = OracleRequest::new(TaskKind::Judge, judge_prompt(tool, rec))?.with_schema(prompts::judge_schema());
        let answer = match self.gateway.complete(&req).await? {
            Completion::Structured(v) => v,
            Completion::Text(t) => serde_json::from_str(t.trim()).unwrap_or(Value::String(t)),
        };
        let label = match &answer {
            Value::Object(o) => o.get("response_type").and_then(Value::as_str).unwrap_or("").to_string(),
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        JudgeClassification::parse(&label).ok_or(ValidateError::UnparseableLabel(label))
    }
}

const ERROR_KEYS: [&str; 6] = ["error", "errors", "exception", "fault", "error_message", "errormessage"];
const ERROR_TEXT_MARKERS: [&str; 5] = ["error", "exception", "invalid", "not found", "traceback"];
const NO_ROUTE_MARKERS: [&str; 3] = ["no route", "unknown endpoint", "cannot get"];

fn is_error_key(k: &str) -> bool {
    ERROR_KEYS.contains(&k.to_ascii_lowercase().as_str())
}

/// Rule-based judge used with scripted backends.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleJudge;

impl RuleJudge {
    pub fn classify(rec: &InvocationRecord) -> JudgeClassification {
        let status = rec.status_code.unwrap_or(0);
        if status >= 500 || status == 401 || status == 403 {
            return JudgeClassification::ServerError;
        }
        let lower = rec.text.to_ascii_lowercase();
        if NO_ROUTE_MARKERS.iter().any(|m| lower.contains(m)) {
            return JudgeClassification::CodeError;
        }
        match &rec.json {
            Some(Value::Object(o)) => {
                if o.keys().any(|k| is_error_key(k)) || !o.keys().any(|k| !is_error_key(k) && k != "message") {
                    JudgeClassification::RequestError
                } else if (200..300).contains(&status) {
                    JudgeClassification::Information
                } else {
                    JudgeClassification::RequestError
                }
            }
            Some(Value::Array(a)) if !a.is_empty() && (200..300).contains(&status) => JudgeClassification::Information,
            Some(Value::Array(_)) => JudgeClassification::RequestError,
            Some(Value::Null) | Some(Value::Bool(_)) => JudgeClassification::RequestError,
            Some(_) if (200..300).contains(&status) => JudgeClassification::Information,
            _ => {
                if rec.text.trim().is_empty() || ERROR_TEXT_MARKERS.iter().any(|m| lower.contains(m)) || !(200..300).contains(&status) {
                    JudgeClassification::RequestError
                } else {
                    JudgeClassification::Information
                }
            }
        }
    }
}

#[async_trait]
impl Judge for RuleJudge {
    async fn judge(&self, _tool: &ToolSpec, rec: &InvocationRecord) -> Result<JudgeClassification, ValidateError> {
        Ok(Self::classify(rec))
    }
}

// ---------------------------------------------------------------------------
// Labeling

/// A path segment that still carries placeholder syntax after binding.
fn has_residual_placeholder(url: &str) -> bool {
    let path = url.split('?').next().unwrap_or("");
    let path = path.split_once("://").map_or(path, |(_, r)| r.split_once('/').map_or("", |(_, p)| p));
    path.split('/')
        .any(|seg| seg.starts_with(':') || seg.contains('{') || seg.contains('}') || seg.contains("%7B") || seg.contains('<') || seg.contains("%3C"))
}

/// Label an HTTP outcome given the judge's classification.
pub fn label_response(rec: &InvocationRecord, judgment: Option<JudgeClassification>) -> ErrorLabel {
    let Some(status) = rec.status_code else { return ErrorLabel::AbnormalResponse };
    match (status, judgment) {
        (200, Some(JudgeClassification::Information)) => ErrorLabel::PassedValidation,
        (200, Some(_)) => ErrorLabel::FailedValidation,
        (400..=499, Some(JudgeClassification::RequestError)) => ErrorLabel::WrongParameterValue,
        (400..=499, Some(JudgeClassification::CodeError)) => {
            if status == 404 || has_residual_placeholder(&rec.request_url) {
                ErrorLabel::MissingEndpointPath
            } else {
                ErrorLabel::WrongParameterValue
            }
        }
        _ => ErrorLabel::AbnormalResponse,
    }
}

/// Labels decided before any network traffic.
pub fn precheck(tool: &ToolSpec) -> Option<(ErrorLabel, String)> {
    let Some(example) = &tool.example_binding else {
        return Some((ErrorLabel::NoParameterValue, "no example binding".into()));
    };
    let binding = bind_strings(tool, example);
    if !binding.is_invocable() {
        return Some((ErrorLabel::NoParameterValue, format!("unbound required: {}", binding.unbound_required.join(", "))));
    }
    if tool.is_relative() {
        return Some((ErrorLabel::MissingBaseUrl, format!("relative url {}", tool.url_template)));
    }
    if tool.lacks_endpoint_path() {
        return Some((ErrorLabel::MissingEndpointPath, format!("no endpoint path in {}", tool.url_template)));
    }
    None
}

#[derive(Clone)]
pub struct Validator {
    executor: Arc<Executor>,
    judge: Arc<dyn Judge>,
}

impl fmt::Debug for Validator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Validator").field("executor", &self.executor).finish_non_exhaustive()
    }
}

impl Validator {
    pub fn new(executor: Arc<Executor>, judge: Arc<dyn Judge>) -> Self {
        Self { executor, judge }
    }

    pub fn executor(&self) -> &Arc<Executor> {
        &self.executor
    }

    /// One validation attempt.
    pub async fn attempt(&self, tool: &ToolSpec, round: u32) -> ValidationAttempt {
        if let Some((label, note)) = precheck(tool) {
            return ValidationAttempt { round, label, judgment: None, record: None, note: Some(note) };
        }
        let example = tool.example_binding.clone().unwrap_or_default();
        let rec = match self.executor.call(tool, &example).await {
            Ok(rec) => rec,
            Err(e @ ExecError::NotInvocable(_)) => {
                return ValidationAttempt { round, label: ErrorLabel::NoParameterValue, judgment: None, record: None, note: Some(e.to_string()) }
            }
            Err(e) => {
                return ValidationAttempt { round, label: ErrorLabel::AbnormalResponse, judgment: None, record: None, note: Some(e.to_string()) }
            }
        };
        if rec.status_code.is_none() {
            let note = rec.error.clone();
            return ValidationAttempt { round, label: ErrorLabel::AbnormalResponse, judgment: None, record: Some(rec), note };
        }
        match self.judge.judge(tool, &rec).await {
            Ok(j) => ValidationAttempt { round, label: label_response(&rec, Some(j)), judgment: Some(j), record: Some(rec), note: None },
            Err(e) => ValidationAttempt {
                round,
                label: ErrorLabel::AbnormalResponse,
                judgment: None,
                record: Some(rec),
                note: Some(format!("unjudged: {e}")),
            },
        }
    }

    pub async fn validate_tool(&self, tool: &ToolSpec) -> ValidationOutcome {
        ValidationOutcome::from_attempts(&tool.tool_id, vec![self.attempt(tool, 0).await])
    }
}

// ---------------------------------------------------------------------------
// Cause estimation

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CauseCounts {
    #[serde(rename = "C1 Missing API Documentation Details")]
    pub missing_doc_details: u64,
    #[serde(rename = "C2 Incorrectly Extracted URL Path")]
    pub bad_url_path: u64,
    #[serde(rename = "C3 Incorrect Parameter Values")]
    pub bad_param_values: u64,
    #[serde(rename = "C4 Server-Side Error")]
    pub server_side: u64,
}

impl CauseCounts {
    pub fn as_array(&self) -> [u64; 4] {
        [self.missing_doc_details, self.bad_url_path, self.bad_param_values, self.server_side]
    }
}

pub const CAUSE_NAMES: [&str; 4] =
    ["Missing API Documentation Details", "Incorrectly Extracted URL Path", "Incorrect Parameter Values", "Server-Side Error"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CauseEstimate {
    pub conservative: CauseCounts,
    /// Cumulative: conservative terms plus the additional aggressive terms.
    pub aggressive: CauseCounts,
}

pub fn label_counts(labels: &[ErrorLabel]) -> BTreeMap<ErrorLabel, u64> {
    let mut m = BTreeMap::new();
    for l in labels {
        *m.entry(*l).or_insert(0) += 1;
    }
    m
}

pub fn estimate_causes(labels: &[ErrorLabel]) -> CauseEstimate {
    let n = label_counts(labels);
    let c = |l: ErrorLabel| n.get(&l).copied().unwrap_or(0);
    let (mep, mbu, wpv, fv, npv, ar) = (
        c(ErrorLabel::MissingEndpointPath),
        c(ErrorLabel::MissingBaseUrl),
        c(ErrorLabel::WrongParameterValue),
        c(ErrorLabel::FailedValidation),
        c(ErrorLabel::NoParameterValue),
        c(ErrorLabel::AbnormalResponse),
    );
    let conservative = CauseCounts { missing_doc_details: 0, bad_url_path: mep, bad_param_values: wpv + fv, server_side: 0 };
    let aggressive = CauseCounts {
        missing_doc_details: conservative.missing_doc_details + mbu + npv,
        bad_url_path: conservative.bad_url_path + mbu,
        bad_param_values: conservative.bad_param_values + npv + ar,
        server_side: conservative.server_side + fv + ar,
    };
    CauseEstimate { conservative, aggressive }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;
    use serde_json::json;

    fn rec(status: u16, body: &str) -> InvocationRecord {
        InvocationRecord::from_response(status, body.as_bytes(), false, "http://h/x", Utc::now(), 1)
    }

    #[test]
    fn worked_example() {
        use ErrorLabel::*;
        let mut labels = vec![MissingEndpointPath; 2];
        labels.push(MissingBaseUrl);
        labels.extend([WrongParameterValue; 3]);
        labels.extend([FailedValidation; 2]);
        labels.extend([NoParameterValue; 4]);
        labels.push(AbnormalResponse);
        let e = estimate_causes(&labels);
        assert_eq!(e.conservative.as_array(), [0, 2, 5, 0]);
        assert_eq!(e.aggressive.as_array(), [5, 3, 10, 3]);
        assert_eq!(estimate_causes(&[]), CauseEstimate::default());
        assert_eq!(estimate_causes(&[PassedValidation; 5]), CauseEstimate::default());
    }

    #[test]
    fn rule_judge_examples() {
        assert_eq!(RuleJudge::classify(&rec(200, r#"{"code":"Ok","routes":[]}"#)), JudgeClassification::Information);
        assert_eq!(RuleJudge::classify(&rec(401, r#"{"message":"invalid key"}"#)), JudgeClassification::ServerError);
        assert_eq!(RuleJudge::classify(&rec(200, "")), JudgeClassification::RequestError);
        assert_eq!(RuleJudge::classify(&rec(503, "busy")), JudgeClassification::ServerError);
        assert_eq!(RuleJudge::classify(&rec(400, r#"{"error":"bad id"}"#)), JudgeClassification::RequestError);
        assert_eq!(RuleJudge::classify(&rec(404, "Cannot GET /x")), JudgeClassification::CodeError);
        assert_eq!(RuleJudge::classify(&rec(200, "plain words")), JudgeClassification::Information);
    }

    #[test]
    fn labels_from_status_and_judgment() {
        use JudgeClassification::*;
        assert_eq!(label_response(&rec(200, "{}"), Some(Information)), ErrorLabel::PassedValidation);
        assert_eq!(label_response(&rec(200, "{}"), Some(RequestError)), ErrorLabel::FailedValidation);
        assert_eq!(label_response(&rec(503, ""), Some(ServerError)), ErrorLabel::AbnormalResponse);
        assert_eq!(label_response(&rec(404, "{}"), Some(RequestError)), ErrorLabel::WrongParameterValue);
        assert_eq!(label_response(&rec(404, "{}"), Some(CodeError)), ErrorLabel::MissingEndpointPath);
        assert_eq!(label_response(&rec(400, "{}"), Some(CodeError)), ErrorLabel::WrongParameterValue);
        let none = InvocationRecord::transport_failure("http://h", Utc::now(), 1, "refused".into());
        assert_eq!(label_response(&none, None), ErrorLabel::AbnormalResponse);
    }

    #[test]
    fn best_label_is_kept_for_failures() {
        let a = |round, label| ValidationAttempt { round, label, judgment: None, record: None, note: None };
        let o = ValidationOutcome::from_attempts(
            "t",
            vec![a(0, ErrorLabel::NoParameterValue), a(1, ErrorLabel::WrongParameterValue), a(2, ErrorLabel::AbnormalResponse)],
        );
        assert_eq!(o.final_label, ErrorLabel::WrongParameterValue);
        assert!(!o.verified);
        let o = ValidationOutcome::from_attempts("t", vec![a(0, ErrorLabel::NoParameterValue), a(1, ErrorLabel::PassedValidation)]);
        assert!(o.verified);
    }

    #[test]
    fn label_serde_names() {
        assert_eq!(json!(ErrorLabel::MissingBaseUrl), json!("MissingBaseURL"));
        assert_eq!(json!(JudgeClassification::CodeError), json!("code_error"));
        assert_eq!(judge_window("aé", 2), "a");
    }
}
