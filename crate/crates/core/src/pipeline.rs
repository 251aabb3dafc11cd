//! Stage functions over an output directory. Every stage reads the previous
//! stage's JSON artifacts and writes its own, so stages can run one at a time
//! or chained.
//!
//! Layout under the output root:
//!
//! ```text
//! api/{source_id}.api.json          extract
//! extract.json                      extract summary
//! tools/{tool_id}.tool.json         compile (status updated by validate/refine)
//! compile.json                      compile summary
//! validation.json                   validate
//! refinement.json, refinements/     refine
//! export/{name}.py                  export
//! tools.openapi.json                export
//! report.md, report.json            report
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::compiler::{compile_document, compile_targeted, generate_fingerprints, MethodPolicy, ToolNamer, ToolSpec, ToolStatus};
use crate::docingest::{classify_doc_quality, extract_api_json, has_api_content, load_document, slugify, ApiDocument, DocQuality};
use crate::executor::Executor;
use crate::exporter::{emit_executable_tool, emit_openapi, py_ident, CorpusMetadata, ToolSet};
use crate::oracles::OracleGateway;
use crate::paramkb::{KbError, ParamKb};
use crate::refiner::{record_successes, success_values, RefineResult, RefinementTranscript, Refiner};
use crate::validator::{estimate_causes, CauseEstimate, ErrorLabel, ValidationOutcome, Validator, CAUSE_NAMES};

#[derive(Debug, Error)]
pub enum StageError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}: invalid artifact: {reason}")]
    Artifact { path: String, reason: String },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    #[default]
    Direct,
    Targeted,
    Both,
}

impl FromStr for GenerationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Self::Direct),
            "targeted" => Ok(Self::Targeted),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown generation mode {other} (direct, targeted, both)")),
        }
    }
}

impl fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Direct => "direct",
            Self::Targeted => "targeted",
            Self::Both => "both",
        })
    }
}

/// Paths of every artifact under one output root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn api_dir(&self) -> PathBuf {
        self.root.join("api")
    }
    pub fn tools_dir(&self) -> PathBuf {
        self.root.join("tools")
    }
    pub fn refinements_dir(&self) -> PathBuf {
        self.root.join("refinements")
    }
    pub fn export_dir(&self) -> PathBuf {
        self.root.join("export")
    }
    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

pub const EXTRACT_SUMMARY: &str = "extract.json";
pub const COMPILE_SUMMARY: &str = "compile.json";
pub const VALIDATION_FILE: &str = "validation.json";
pub const REFINEMENT_FILE: &str = "refinement.json";
pub const OPENAPI_FILE: &str = "tools.openapi.json";
pub const REPORT_MD: &str = "report.md";
pub const REPORT_JSON: &str = "report.json";

fn io_err(path: &Path, e: impl fmt::Display) -> StageError {
    StageError::Io { path: path.display().to_string(), reason: e.to_string() }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StageError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StageError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| StageError::Artifact { path: path.display().to_string(), reason: e.to_string() })
}

fn write_text(path: &Path, text: &str) -> Result<(), StageError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Files in `dir` ending with `suffix`, sorted by name.
pub fn list_files(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>, StageError> {
    if !dir.is_dir() {
        return Err(StageError::MissingInput(dir.display().to_string()));
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .collect();
    out.sort();
    Ok(out)
}

/// Remove stale files of a kind before a stage rewrites them.
fn clear_files(dir: &Path, suffix: &str) -> Result<(), StageError> {
    if dir.is_dir() {
        for p in list_files(dir, suffix)? {
            std::fs::remove_file(&p).map_err(|e| io_err(&p, e))?;
        }
    }
    Ok(())
}

pub fn load_api_docs(layout: &Layout) -> Result<Vec<ApiDocument>, StageError> {
    list_files(&layout.api_dir(), ".api.json")?.iter().map(|p| read_json(p)).collect()
}

pub fn load_tools(layout: &Layout) -> Result<Vec<ToolSpec>, StageError> {
    list_files(&layout.tools_dir(), ".tool.json")?.iter().map(|p| read_json(p)).collect()
}

pub fn save_tool(layout: &Layout, tool: &ToolSpec) -> Result<(), StageError> {
    write_json(&layout.tools_dir().join(tool.file_name()), tool)
}

const DOC_EXTENSIONS: [&str; 5] = [".html", ".htm", ".md", ".markdown", ".txt"];

// ---------------------------------------------------------------------------
// extract

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub documents: usize,
    pub extracted: Vec<String>,
    pub filtered: Vec<String>,
    pub failed: BTreeMap<String, String>,
}

enum DocResult {
    Extracted(ApiDocument),
    Filtered(String),
    Failed(String, String),
}

async fn extract_one(gw: &OracleGateway, origin: String) -> DocResult {
    let raw = match load_document(&origin).await {
        Ok(r) => r,
        Err(e) => return DocResult::Failed(origin, e.to_string()),
    };
    match has_api_content(gw, &raw).await {
        Ok(true) => {}
        Ok(false) => return DocResult::Filtered(raw.source_id),
        Err(e) => return DocResult::Failed(raw.source_id, e.to_string()),
    }
    let quality = match classify_doc_quality(gw, &raw).await {
        Ok(q) => Some(q.quality),
        Err(e) => {
            tracing::warn!(source = %raw.source_id, error = %e, "quality classification failed");
            None
        }
    };
    match extract_api_json(gw, &raw).await {
        Ok(mut doc) => {
            doc.quality = quality;
            DocResult::Extracted(doc)
        }
        Err(e) => DocResult::Failed(raw.source_id, e.to_string()),
    }
}

/// Documents in `input` (files with a documentation extension, or a `urls.txt`
/// list of http(s) origins, one per line).
pub fn discover_inputs(input: &Path) -> Result<Vec<String>, StageError> {
    if input.is_file() {
        return Ok(vec![input.display().to_string()]);
    }
    if !input.is_dir() {
        return Err(StageError::MissingInput(input.display().to_string()));
    }
    let mut origins = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(input).map_err(|e| io_err(input, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("").to_ascii_lowercase();
        if name == "urls.txt" {
            let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            origins.extend(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from));
        } else if p.is_file() && DOC_EXTENSIONS.iter().any(|ext| name.ends_with(ext)) {
            origins.push(p.display().to_string());
        }
    }
    Ok(origins)
}

pub async fn run_extract(gw: &OracleGateway, input: &Path, layout: &Layout, jobs: usize) -> Result<ExtractSummary, StageError> {
    let origins = discover_inputs(input)?;
    let results: Vec<DocResult> = stream::iter(origins.iter().cloned().map(|o| extract_one(gw, o))).buffered(jobs.max(1)).collect().await;
    clear_files(&layout.api_dir(), ".api.json")?;
    std::fs::create_dir_all(layout.api_dir()).map_err(|e| io_err(&layout.api_dir(), e))?;
    let mut summary = ExtractSummary { documents: origins.len(), ..Default::default() };
    for r in results {
        match r {
            DocResult::Extracted(doc) => {
                write_json(&layout.api_dir().join(doc.file_name()), &doc)?;
                summary.extracted.push(doc.source_id);
            }
            DocResult::Filtered(id) => summary.filtered.push(id),
            DocResult::Failed(id, e) => {
                summary.failed.insert(id, e);
            }
        }
    }
    write_json(&layout.file(EXTRACT_SUMMARY), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// compile

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompileSummary {
    pub tools: Vec<String>,
    pub unresolved: Vec<String>,
    /// endpoint (as `source_id/endpoint`) to reason
    pub rejected: BTreeMap<String, String>,
    pub fingerprints: usize,
}

pub async fn run_compile(gw: &OracleGateway, layout: &Layout, policy: &MethodPolicy, mode: GenerationMode) -> Result<CompileSummary, StageError> {
    let docs = load_api_docs(layout)?;
    let mut namer = ToolNamer::new();
    let mut summary = CompileSummary::default();
    let mut tools = Vec::new();
    for doc in &docs {
        if mode != GenerationMode::Targeted {
            let compiled = compile_document(doc, policy, &mut namer);
            for (ep, e) in compiled.rejected {
                summary.rejected.insert(format!("{}/{}", doc.source_id, ep), e.to_string());
            }
            summary.unresolved.extend(compiled.unresolved.iter().map(|t| t.tool_id.clone()));
            tools.extend(compiled.tools);
            tools.extend(compiled.unresolved);
        }
        if mode != GenerationMode::Direct {
            match generate_fingerprints(gw, doc).await {
                Ok(fps) => {
                    summary.fingerprints += fps.len();
                    for fp in fps {
                        let allowed = doc.endpoint(&fp.parent.endpoint).and_then(|e| e.method.parse().ok()).is_some_and(|m| policy.allows(m));
                        if !allowed {
                            summary.rejected.insert(format!("{}/{}", doc.source_id, fp.use_case), "method not allowed".into());
                            continue;
                        }
                        let name = namer.allocate(&slugify(&fp.use_case));
                        match compile_targeted(&fp, doc, &name) {
                            Ok(t) => {
                                if t.is_relative() {
                                    summary.unresolved.push(t.tool_id.clone());
                                }
                                tools.push(t)
                            }
                            Err(e) => {
                                summary.rejected.insert(format!("{}/{}", doc.source_id, fp.use_case), e.to_string());
                            }
                        }
                    }
                }
                Err(e) => {
                    summary.rejected.insert(format!("{}/*fingerprints", doc.source_id), e.to_string());
                }
            }
        }
    }
    clear_files(&layout.tools_dir(), ".tool.json")?;
    for t in &tools {
        save_tool(layout, t)?;
        summary.tools.push(t.tool_id.clone());
    }
    summary.tools.sort();
    summary.unresolved.sort();
    write_json(&layout.file(COMPILE_SUMMARY), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// validate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub outcomes: Vec<ValidationOutcome>,
    pub total: usize,
    pub passed: usize,
    pub pass_rate: f64,
    pub label_counts: BTreeMap<ErrorLabel, u64>,
    pub causes: CauseEstimate,
}

impl ValidationReport {
    pub fn from_outcomes(mut outcomes: Vec<ValidationOutcome>) -> Self {
        outcomes.sort_by(|a, b| a.tool_id.cmp(&b.tool_id));
        let labels: Vec<ErrorLabel> = outcomes.iter().map(|o| o.final_label).collect();
        let passed = outcomes.iter().filter(|o| o.verified).count();
        let total = outcomes.len();
        Self {
            total,
            passed,
            pass_rate: if total == 0 { 0.0 } else { passed as f64 / total as f64 },
            label_counts: crate::validator::label_counts(&labels),
            causes: estimate_causes(&labels),
            outcomes,
        }
    }

    pub fn outcome(&self, tool_id: &str) -> Option<&ValidationOutcome> {
        self.outcomes.iter().find(|o| o.tool_id == tool_id)
    }
}

pub async fn open_kb(path: &Path, gw: &OracleGateway) -> Result<ParamKb, StageError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    Ok(ParamKb::open(path, gw.clone()).await?)
}

/// Validate every compiled tool, then feed the KB with documentation examples
/// and the responses of verified tools.
pub async fn run_validate(validator: &Validator, layout: &Layout, kb: &mut ParamKb, jobs: usize) -> Result<ValidationReport, StageError> {
    let docs = load_api_docs(layout)?;
    for doc in &docs {
        kb.ingest_doc_examples(doc).await?;
    }
    let tools = load_tools(layout)?;
    let outcomes: Vec<ValidationOutcome> = stream::iter(tools.iter().map(|t| validator.validate_tool(t))).buffered(jobs.max(1)).collect().await;
    for (tool, outcome) in tools.iter().zip(&outcomes) {
        let mut t = tool.clone();
        t.status = if outcome.verified { ToolStatus::Passed } else { ToolStatus::Failed };
        save_tool(layout, &t)?;
        if outcome.verified {
            if let Some(rec) = &outcome.last_attempt().record {
                kb.harvest_response(&t, rec).await?;
            }
        }
    }
    let report = ValidationReport::from_outcomes(outcomes);
    write_json(&layout.file(VALIDATION_FILE), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// refine

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub passed_before: usize,
    pub passed_after: usize,
    pub refine_calls: u32,
    /// Parameter values of passing revisions written to the KB.
    pub kb_values_recorded: usize,
    pub report: ValidationReport,
}

/// A tool that an earlier refine run already fixed: its stored revision
/// passed, but the validation outcome (round 0) did not.
fn prior_result(tool: &ToolSpec, outcome: &ValidationOutcome, prior: Option<&RefinementReport>, layout: &Layout) -> Option<RefineResult> {
    if outcome.verified || tool.status != ToolStatus::Passed || tool.revision == 0 {
        return None;
    }
    let prev = prior?.report.outcome(&tool.tool_id)?.clone();
    let transcript: RefinementTranscript = read_json(&layout.refinements_dir().join(format!("{}.refine.json", tool.tool_id))).ok()?;
    Some(RefineResult {
        refine_calls: transcript.rounds.len() as u32,
        successes: success_values(tool),
        tool: tool.clone(),
        outcome: prev,
        transcript,
    })
}

pub async fn run_refine(refiner: &Refiner, layout: &Layout, kb: &mut ParamKb, jobs: usize) -> Result<RefinementReport, StageError> {
    let validation: ValidationReport = read_json(&layout.file(VALIDATION_FILE))?;
    let prior: Option<RefinementReport> = if layout.file(REFINEMENT_FILE).exists() { read_json(&layout.file(REFINEMENT_FILE)).ok() } else { None };
    let docs: BTreeMap<String, ApiDocument> = load_api_docs(layout)?.into_iter().map(|d| (d.source_id.clone(), d)).collect();
    let tools = load_tools(layout)?;
    let mut work = Vec::new();
    for tool in &tools {
        let outcome =
            validation.outcome(&tool.tool_id).cloned().ok_or_else(|| StageError::MissingInput(format!("validation outcome for {}", tool.tool_id)))?;
        let reused = prior_result(tool, &outcome, prior.as_ref(), layout);
        work.push((tool, outcome, reused));
    }
    let snapshot = kb.clone();
    let view = snapshot.view();
    let results: Vec<RefineResult> = stream::iter(work.iter().map(|(tool, outcome, reused)| {
        let view = &view;
        let docs = &docs;
        async move {
            match reused {
                Some(r) => r.clone(),
                None => refiner.refine_loop(tool, outcome, docs.get(&tool.source.source_id), view).await,
            }
        }
    }))
    .buffered(jobs.max(1))
    .collect()
    .await;

    clear_files(&layout.refinements_dir(), ".refine.json")?;
    let mut calls = 0;
    for r in &results {
        calls += r.refine_calls;
        save_tool(layout, &r.tool)?;
        if !r.transcript.rounds.is_empty() {
            write_json(&layout.refinements_dir().join(r.transcript.file_name()), &r.transcript)?;
        }
    }
    record_successes(kb, &results).await?;
    let recorded = results.iter().map(|r| r.successes.len()).sum();
    for r in &results {
        if r.refine_calls > 0 && r.outcome.verified {
            if let Some(rec) = &r.outcome.last_attempt().record {
                kb.harvest_response(&r.tool, rec).await?;
            }
        }
    }
    let report = ValidationReport::from_outcomes(results.into_iter().map(|r| r.outcome).collect());
    let out =
        RefinementReport { passed_before: validation.passed, passed_after: report.passed, refine_calls: calls, kb_values_recorded: recorded, report };
    write_json(&layout.file(REFINEMENT_FILE), &out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// export

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub tools: Vec<String>,
}

pub fn verified_toolset(layout: &Layout) -> Result<ToolSet, StageError> {
    let tools = load_tools(layout)?;
    let sources = load_api_docs(layout).map(|d| d.len()).unwrap_or(0);
    let total = tools.len();
    let verified: Vec<ToolSpec> = tools.into_iter().filter(|t| t.status == ToolStatus::Passed).collect();
    let metadata = CorpusMetadata { sources, tools_validated: total, pass_rate: if total == 0 { 0.0 } else { verified.len() as f64 / total as f64 } };
    ToolSet::from_verified(verified, metadata).map_err(|e| StageError::Other(e.to_string()))
}

pub fn run_export(layout: &Layout) -> Result<ExportSummary, StageError> {
    let set = verified_toolset(layout)?;
    clear_files(&layout.export_dir(), ".py")?;
    let mut names = Vec::new();
    for t in set.tools() {
        let file = layout.export_dir().join(format!("{}.py", py_ident(&t.name)));
        write_text(&file, &emit_executable_tool(t))?;
        names.push(t.name.clone());
    }
    let doc = emit_openapi(&set).map_err(|e| StageError::Other(e.to_string()))?;
    write_json(&layout.file(OPENAPI_FILE), &doc)?;
    Ok(ExportSummary { tools: names })
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityBreakdown {
    pub quality: String,
    pub tools: usize,
    pub passed: usize,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tools: usize,
    pub passed_initial: usize,
    pub passed_final: usize,
    pub pass_rate_initial: f64,
    pub pass_rate_final: f64,
    pub label_counts: BTreeMap<ErrorLabel, u64>,
    pub causes: CauseEstimate,
    pub by_quality: Vec<QualityBreakdown>,
}

fn rate(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

pub fn run_report(layout: &Layout) -> Result<Report, StageError> {
    let initial: ValidationReport = read_json(&layout.file(VALIDATION_FILE))?;
    let final_report =
        if layout.file(REFINEMENT_FILE).exists() { read_json::<RefinementReport>(&layout.file(REFINEMENT_FILE))?.report } else { initial.clone() };
    let quality: BTreeMap<String, Option<DocQuality>> =
        load_api_docs(layout).unwrap_or_default().into_iter().map(|d| (d.source_id, d.quality)).collect();
    let tools = load_tools(layout)?;
    let source_of: BTreeMap<String, String> = tools.iter().map(|t| (t.tool_id.clone(), t.source.source_id.clone())).collect();

    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for o in &final_report.outcomes {
        let q = source_of
            .get(&o.tool_id)
            .and_then(|s| quality.get(s).cloned().flatten())
            .map(|q| q.label().to_string())
            .unwrap_or_else(|| "Unclassified".into());
        let g = groups.entry(q).or_default();
        g.0 += 1;
        g.1 += usize::from(o.verified);
    }
    let by_quality =
        groups.into_iter().map(|(quality, (tools, passed))| QualityBreakdown { quality, tools, passed, pass_rate: rate(passed, tools) }).collect();
    let report = Report {
        tools: final_report.total,
        passed_initial: initial.passed,
        passed_final: final_report.passed,
        pass_rate_initial: rate(initial.passed, initial.total),
        pass_rate_final: rate(final_report.passed, final_report.total),
        label_counts: final_report.label_counts.clone(),
        causes: final_report.causes,
        by_quality,
    };
    write_json(&layout.file(REPORT_JSON), &report)?;
    write_text(&layout.file(REPORT_MD), &render_report_md(&report))?;
    Ok(report)
}

pub fn render_report_md(r: &Report) -> String {
    let pct = |x: f64| format!("{:.1}%", x * 100.0);
    let mut s = String::from("# Tool validation report\n\n");
    s.push_str(&format!(
        "| | Tools | Passed | Pass rate |\n|---|---:|---:|---:|\n| Initial validation | {} | {} | {} |\n| After refinement | {} | {} | {} |\n\n",
        r.tools,
        r.passed_initial,
        pct(r.pass_rate_initial),
        r.tools,
        r.passed_final,
        pct(r.pass_rate_final)
    ));
    s.push_str("## Labels\n\n| Label | Count |\n|---|---:|\n");
    for l in ErrorLabel::ALL {
        s.push_str(&format!("| {} | {} |\n", l.title(), r.label_counts.get(&l).copied().unwrap_or(0)));
    }
    s.push_str("\n## Estimated error causes\n\n| Category | Conservative | Aggressive |\n|---|---:|---:|\n");
    let (c, a) = (r.causes.conservative.as_array(), r.causes.aggressive.as_array());
    for (i, name) in CAUSE_NAMES.iter().enumerate() {
        s.push_str(&format!("| C{} {} | {} | {} |\n", i + 1, name, c[i], a[i]));
    }
    s.push_str("\n## By documentation quality\n\n| Quality | Tools | Passed | Pass rate |\n|---|---:|---:|---:|\n");
    for q in &r.by_quality {
        s.push_str(&format!("| {} | {} | {} | {} |\n", q.quality, q.tools, q.passed, pct(q.pass_rate)));
    }
    s
}

/// Everything the stages need, built once by the caller.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub gateway: OracleGateway,
    pub executor: Arc<Executor>,
    pub validator: Validator,
    pub policy: MethodPolicy,
    pub jobs: usize,
    pub max_rounds: u32,
    pub mode: GenerationMode,
}

impl Pipeline {
    pub fn refiner(&self) -> Refiner {
        Refiner::new(self.gateway.clone(), self.validator.clone(), self.max_rounds)
    }

    /// extract → compile → validate → refine → export → report.
    pub async fn run_all(&self, input: &Path, layout: &Layout, kb: &mut ParamKb) -> Result<Value, StageError> {
        let extract = run_extract(&self.gateway, input, layout, self.jobs).await?;
        let compile = run_compile(&self.gateway, layout, &self.policy, self.mode).await?;
        let validate = run_validate(&self.validator, layout, kb, self.jobs).await?;
        let refine = run_refine(&self.refiner(), layout, kb, self.jobs).await?;
        let export = match run_export(layout) {
            Ok(e) => json!(e.tools),
            Err(e) => json!({ "error": e.to_string() }),
        };
        let report = run_report(layout)?;
        Ok(json!({
            "extracted": extract.extracted.len(),
            "tools": compile.tools.len(),
            "passed_initial": validate.passed,
            "passed_final": refine.passed_after,
            "exported": export,
            "pass_rate_final": report.pass_rate_final,
        }))
    }
}
