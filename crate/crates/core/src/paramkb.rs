//! Parameter knowledge base: donor values from documentation examples,
//! harvested responses and successful refinements, indexed by embedding.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::compiler::{canonical_scalar, tool_id_for, ToolParam, ToolSpec};
use crate::docingest::{slugify, ApiDocument};
use crate::executor::InvocationRecord;
use crate::oracles::{EmbeddingVector, OracleError, OracleGateway};

pub const KB_FILE: &str = "paramkb.jsonl";
pub const MAX_VALUE_CHARS: usize = 200;
pub const MAX_VALUES_PER_LEAF: usize = 20;
pub const RETRIEVAL_POOL: usize = 50;
pub const MAX_CANDIDATES: usize = 10;
pub const PARAM_WEIGHT: f64 = 0.6;
pub const TOOL_WEIGHT: f64 = 0.4;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("api {0} is not known to the knowledge base")]
    UnknownApi(String),
    #[error("knowledge base io: {0}")]
    Io(#[from] std::io::Error),
    #[error("knowledge base line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KbSource {
    DocExample,
    ResponseHarvest,
    RefinementSuccess,
}

#[derive(Debug, Clone, PartialEq)]
struct EntryVectors {
    name: EmbeddingVector,
    desc: Option<EmbeddingVector>,
    tool: Option<EmbeddingVector>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KbEntry {
    pub key_name: String,
    #[serde(default)]
    pub key_description: Option<String>,
    pub value: String,
    pub source: KbSource,
    pub source_tool: String,
    pub source_api: String,
    #[serde(default)]
    pub tool_description: String,
    #[serde(skip)]
    vectors: Option<EntryVectors>,
}

impl PartialEq for KbEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key_name == other.key_name
            && self.key_description == other.key_description
            && self.value == other.value
            && self.source == other.source
            && self.source_tool == other.source_tool
            && self.source_api == other.source_api
            && self.tool_description == other.tool_description
    }
}

impl KbEntry {
    pub fn new(key_name: &str, value: &str, source: KbSource, source_tool: &str, source_api: &str) -> Self {
        Self {
            key_name: key_name.to_string(),
            key_description: None,
            value: value.to_string(),
            source,
            source_tool: source_tool.to_string(),
            source_api: source_api.to_string(),
            tool_description: String::new(),
            vectors: None,
        }
    }

    pub fn with_description(mut self, d: Option<&str>) -> Self {
        self.key_description = d.map(str::trim).filter(|d| !d.is_empty()).map(String::from);
        self
    }

    pub fn with_tool_description(mut self, d: &str) -> Self {
        self.tool_description = d.trim().to_string();
        self
    }

    fn dedup_key(&self) -> (String, String, String) {
        (self.source_api.clone(), self.key_name.clone(), self.value.clone())
    }
}

/// An unknown parameter to find values for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamQuery {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    pub owner_tool: String,
    #[serde(default)]
    pub owner_description: String,
    pub owner_api: String,
}

impl ParamQuery {
    pub fn for_param(tool: &ToolSpec, param: &ToolParam) -> Self {
        Self {
            name: param.name.clone(),
            description: param.description.clone(),
            owner_tool: tool.tool_id.clone(),
            owner_description: tool.description.clone(),
            owner_api: tool.source.source_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryRef {
    pub index: usize,
    pub key_name: String,
    pub source: KbSource,
    pub source_tool: String,
    pub source_api: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCandidate {
    pub value: String,
    pub score: f64,
    pub provenance: EntryRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InferMode {
    #[default]
    TopK,
    /// Score-weighted sampling without replacement from the retrieval pool.
    Sample { seed: u64 },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum KbLine {
    Api { source_api: String },
    Entry(KbEntry),
}

/// The knowledge base. Writes take `&mut self`; callers that share it wrap it
/// in a lock, which gives the single-writer discipline.
#[derive(Debug, Clone)]
pub struct ParamKb {
    gateway: OracleGateway,
    entries: Vec<KbEntry>,
    keys: HashSet<(String, String, String)>,
    per_leaf: HashMap<(String, String), usize>,
    apis: BTreeSet<String>,
    cache: HashMap<String, EmbeddingVector>,
    path: Option<PathBuf>,
}

fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    a.cosine(b).clamp(0.0, 1.0)
}

impl ParamKb {
    pub fn new(gateway: OracleGateway) -> Self {
        Self {
            gateway,
            entries: Vec::new(),
            keys: HashSet::new(),
            per_leaf: HashMap::new(),
            apis: BTreeSet::new(),
            cache: HashMap::new(),
            path: None,
        }
    }

    /// Open (or create) a KB file. New entries are appended to it.
    pub async fn open(path: &Path, gateway: OracleGateway) -> Result<Self, KbError> {
        let mut kb = Self::new(gateway);
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: KbLine = serde_json::from_str(&line).map_err(|e| KbError::Corrupt { line: i + 1, reason: e.to_string() })?;
                match parsed {
                    KbLine::Api { source_api } => {
                        kb.apis.insert(source_api);
                    }
                    KbLine::Entry(e) => {
                        kb.insert(e).await?;
                    }
                }
            }
        }
        kb.path = Some(path.to_path_buf());
        Ok(kb)
    }

    /// Write the whole KB to `path`, replacing its contents.
    pub fn save_to(&self, path: &Path) -> Result<(), KbError> {
        let mut w = BufWriter::new(File::create(path)?);
        for api in &self.apis {
            serde_json::to_writer(&mut w, &KbLine::Api { source_api: api.clone() }).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        for e in &self.entries {
            serde_json::to_writer(&mut w, &KbLine::Entry(e.clone())).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    fn append_line(&self, line: &KbLine) -> Result<(), KbError> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut s = serde_json::to_string(line).map_err(std::io::Error::from)?;
            s.push('\n');
            f.write_all(s.as_bytes())?;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn apis(&self) -> impl Iterator<Item = &str> {
        self.apis.iter().map(String::as_str)
    }

    pub fn register_api(&mut self, api: &str) -> Result<(), KbError> {
        if self.apis.insert(api.to_string()) {
            self.append_line(&KbLine::Api { source_api: api.to_string() })?;
        }
        Ok(())
    }

    async fn embed_cached(&mut self, text: &str) -> Result<Option<EmbeddingVector>, KbError> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(None);
        }
        if let Some(v) = self.cache.get(text) {
            return Ok(Some(v.clone()));
        }
        let v = self.gateway.embed(text).await?;
        self.cache.insert(text.to_string(), v.clone());
        Ok(Some(v))
    }

    /// Insert one entry unless it duplicates an existing (api, key, value) or
    /// breaks the size bounds. Returns whether it was added. Does not persist.
    async fn insert(&mut self, mut entry: KbEntry) -> Result<bool, KbError> {
        if entry.value.chars().count() > MAX_VALUE_CHARS {
            tracing::debug!(key = %entry.key_name, "skipping value longer than {MAX_VALUE_CHARS} chars");
            return Ok(false);
        }
        if entry.value.trim().is_empty() || entry.key_name.trim().is_empty() {
            return Ok(false);
        }
        let key = entry.dedup_key();
        if self.keys.contains(&key) {
            return Ok(false);
        }
        let leaf = (entry.source_tool.clone(), entry.key_name.clone());
        let count = self.per_leaf.get(&leaf).copied().unwrap_or(0);
        if count >= MAX_VALUES_PER_LEAF {
            return Ok(false);
        }
        let name = self.embed_cached(&entry.key_name).await?.ok_or(OracleError::EmptyText)?;
        let desc = match entry.key_description.clone() {
            Some(d) => self.embed_cached(&d).await?,
            None => None,
        };
        let tool_desc = entry.tool_description.clone();
        let tool = self.embed_cached(&tool_desc).await?;
        entry.vectors = Some(EntryVectors { name, desc, tool });
        self.apis.insert(entry.source_api.clone());
        self.keys.insert(key);
        self.per_leaf.insert(leaf, count + 1);
        self.entries.push(entry);
        Ok(true)
    }

    /// Insert and persist.
    pub async fn add(&mut self, entry: KbEntry) -> Result<bool, KbError> {
        let added = self.insert(entry).await?;
        if added {
            let e = self.entries.last().expect("just inserted").clone();
            self.append_line(&KbLine::Entry(e))?;
        }
        Ok(added)
    }

    pub async fn ingest_doc_examples(&mut self, doc: &ApiDocument) -> Result<usize, KbError> {
        self.register_api(&doc.source_id)?;
        let mut added = 0;
        for ep in &doc.endpoints {
            let tool_id = tool_id_for(&doc.source_id, &slugify(&ep.name));
            let tool_desc = ep.description.clone().unwrap_or_else(|| ep.name.clone());
            for p in ep.parameters() {
                let Some(value) = p.example.as_ref().and_then(canonical_scalar) else { continue };
                let entry = KbEntry::new(&p.name, &value, KbSource::DocExample, &tool_id, &doc.source_id)
                    .with_description(p.description.as_deref())
                    .with_tool_description(&tool_desc);
                if self.add(entry).await? {
                    added += 1;
                }
            }
        }
        Ok(added)
    }

    pub async fn harvest_response(&mut self, tool: &ToolSpec, rec: &InvocationRecord) -> Result<usize, KbError> {
        self.register_api(&tool.source.source_id)?;
        let Some(json) = &rec.json else { return Ok(0) };
        let mut leaves = Vec::new();
        flatten_json(json, "", None, &mut leaves);
        let mut added = 0;
        for (path, key, value) in leaves {
            let entry = KbEntry::new(&key, &value, KbSource::ResponseHarvest, &tool.tool_id, &tool.source.source_id)
                .with_description(Some(&path))
                .with_tool_description(&tool.description);
            if self.add(entry).await? {
                added += 1;
            }
        }
        Ok(added)
    }

    pub async fn record_success(&mut self, q: &ParamQuery, value: &str) -> Result<bool, KbError> {
        if value.chars().count() > MAX_VALUE_CHARS {
            tracing::warn!(param = %q.name, "refined value exceeds {MAX_VALUE_CHARS} chars; not recorded");
            return Ok(false);
        }
        let entry = KbEntry::new(&q.name, value, KbSource::RefinementSuccess, &q.owner_tool, &q.owner_api)
            .with_description(q.description.as_deref())
            .with_tool_description(&q.owner_description);
        self.add(entry).await
    }

    /// Whether a value for `name` is already stored for `api`.
    pub fn contains(&self, api: &str, name: &str, value: &str) -> bool {
        self.keys.contains(&(api.to_string(), name.to_string(), value.to_string()))
    }

    pub fn view(&self) -> KbView<'_> {
        KbView { kb: self, hidden: None }
    }

    pub fn leave_one_api_out(&self, api: &str) -> Result<KbView<'_>, KbError> {
        if !self.apis.contains(api) {
            return Err(KbError::UnknownApi(api.to_string()));
        }
        Ok(KbView { kb: self, hidden: Some(api.to_string()) })
    }

    pub async fn infer_candidates(&self, q: &ParamQuery) -> Result<Vec<ParamCandidate>, KbError> {
        self.view().infer_candidates(q, InferMode::TopK).await
    }
}

/// Read-only view over a KB, optionally masking one API.
#[derive(Debug, Clone)]
pub struct KbView<'a> {
    kb: &'a ParamKb,
    hidden: Option<String>,
}

impl<'a> KbView<'a> {
    pub fn visible(&self) -> impl Iterator<Item = (usize, &'a KbEntry)> + '_ {
        self.kb.entries.iter().enumerate().filter(move |(_, e)| Some(&e.source_api) != self.hidden.as_ref())
    }

    pub fn hidden_api(&self) -> Option<&str> {
        self.hidden.as_deref()
    }

    pub async fn infer_candidates(&self, q: &ParamQuery, mode: InferMode) -> Result<Vec<ParamCandidate>, KbError> {
        if q.name.trim().is_empty() {
            return Ok(Vec::new());
        }
        let gw = &self.kb.gateway;
        let embed = |t: String| async move {
            if t.trim().is_empty() {
                Ok::<_, KbError>(None)
            } else {
                Ok(Some(gw.embed(&t).await?))
            }
        };
        let qname = embed(q.name.clone()).await?.ok_or(OracleError::EmptyText)?;
        let qdesc = embed(q.description.clone().unwrap_or_default()).await?;
        let qtool = embed(q.owner_description.clone()).await?;

        let mut scored: Vec<(f64, f64, usize, &KbEntry)> = Vec::new();
        for (i, e) in self.visible() {
            let Some(v) = &e.vectors else { continue };
            let name_sim = cosine(&qname, &v.name);
            let desc_sim = match (&qdesc, &v.desc) {
                (Some(a), Some(b)) => cosine(a, b),
                _ => 0.0,
            };
            let param_sim = name_sim.max(desc_sim);
            let tool_sim = match (&qtool, &v.tool) {
                (Some(a), Some(b)) => cosine(a, b),
                _ => 0.0,
            };
            let score = (PARAM_WEIGHT * param_sim + TOOL_WEIGHT * tool_sim).clamp(0.0, 1.0);
            scored.push((param_sim, score, i, e));
        }
        // retrieval pool: top-50 by parameter similarity
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
        scored.truncate(RETRIEVAL_POOL);
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.3.value.cmp(&b.3.value)).then(a.2.cmp(&b.2)));

        let mut seen = HashSet::new();
        let pool: Vec<ParamCandidate> = scored
            .into_iter()
            .filter(|(_, _, _, e)| seen.insert(e.value.clone()))
            .map(|(_, score, index, e)| ParamCandidate {
                value: e.value.clone(),
                score,
                provenance: EntryRef {
                    index,
                    key_name: e.key_name.clone(),
                    source: e.source,
                    source_tool: e.source_tool.clone(),
                    source_api: e.source_api.clone(),
                },
            })
            .collect();

        Ok(match mode {
            InferMode::TopK => pool.into_iter().take(MAX_CANDIDATES).collect(),
            InferMode::Sample { seed } => sample_weighted(pool, seed),
        })
    }
}

fn sample_weighted(mut pool: Vec<ParamCandidate>, seed: u64) -> Vec<ParamCandidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    while picked.len() < MAX_CANDIDATES && !pool.is_empty() {
        let total: f64 = pool.iter().map(|c| c.score.max(1e-6)).sum();
        let mut target = rng.random::<f64>() * total;
        let mut idx = pool.len() - 1;
        for (i, c) in pool.iter().enumerate() {
            target -= c.score.max(1e-6);
            if target <= 0.0 {
                idx = i;
                break;
            }
        }
        picked.push(pool.remove(idx));
    }
    picked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.value.cmp(&b.value)));
    picked
}

/// Flatten JSON into (dotted path, leaf key, canonical value). Array indices
/// appear in the path but never as the leaf key.
pub fn flatten_json(v: &Value, path: &str, key: Option<&str>, out: &mut Vec<(String, String, String)>) {
    let join = |seg: &str| if path.is_empty() { seg.to_string() } else { format!("{path}.{seg}") };
    match v {
        Value::Object(o) => {
            for (k, child) in o {
                flatten_json(child, &join(k), Some(k), out);
            }
        }
        Value::Array(a) => {
            for (i, child) in a.iter().enumerate() {
                flatten_json(child, &join(&i.to_string()), key, out);
            }
        }
        Value::Null => {}
        scalar => {
            if let (Some(k), Some(s)) = (key, canonical_scalar(scalar)) {
                if !s.trim().is_empty() && s.chars().count() <= MAX_VALUE_CHARS {
                    out.push((path.to_string(), k.to_string(), s));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::ScriptedBackend;
    use serde_json::json;

    fn kb() -> ParamKb {
        ParamKb::new(OracleGateway::scripted(ScriptedBackend::new()))
    }

    fn query(name: &str) -> ParamQuery {
        ParamQuery { name: name.into(), description: None, owner_tool: "q.tool".into(), owner_description: String::new(), owner_api: "q".into() }
    }

    #[test]
    fn flattening_drops_indices_from_keys() {
        let mut out = Vec::new();
        flatten_json(&json!({"results": [{"id": "a"}, {"id": 2, "ok": true, "none": null}]}), "", None, &mut out);
        assert_eq!(
            out,
            vec![
                ("results.0.id".into(), "id".into(), "a".into()),
                ("results.1.id".into(), "id".into(), "2".into()),
                ("results.1.ok".into(), "ok".into(), "true".into()),
            ]
        );
    }

    #[tokio::test]
    async fn empty_kb_gives_no_candidates() {
        assert!(kb().infer_candidates(&query("glycan_id")).await.unwrap().is_empty());
    }

    #[tokio::test]
    async fn dedup_and_length_cap() {
        let mut kb = kb();
        let e = KbEntry::new("id", "x", KbSource::DocExample, "a.t", "a");
        assert!(kb.add(e.clone()).await.unwrap());
        assert!(!kb.add(e).await.unwrap());
        let long = "v".repeat(201);
        assert!(!kb.record_success(&query("id"), &long).await.unwrap());
        assert_eq!(kb.len(), 1);
    }

    #[tokio::test]
    async fn at_most_ten_candidates() {
        let mut kb = kb();
        for i in 0..25 {
            kb.add(KbEntry::new("item_id", &format!("v{i}"), KbSource::DocExample, &format!("a.t{i}"), "a")).await.unwrap();
        }
        let c = kb.infer_candidates(&query("item_id")).await.unwrap();
        assert_eq!(c.len(), 10);
        assert!(c.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[tokio::test]
    async fn harvest_caps_values_per_leaf() {
        let mut kb = kb();
        let mut tool = crate::test_support::osrm_tool();
        tool.status = crate::compiler::ToolStatus::Passed;
        let items: Vec<Value> = (0..30).map(|i| json!({"id": format!("x{i}")})).collect();
        let rec = InvocationRecord::from_response(200, json!({ "items": items }).to_string().as_bytes(), false, "u", chrono::Utc::now(), 0);
        assert_eq!(kb.harvest_response(&tool, &rec).await.unwrap(), MAX_VALUES_PER_LEAF);
    }

    #[tokio::test]
    async fn masked_view_requires_known_api() {
        let mut kb = kb();
        kb.register_api("empty").unwrap();
        assert!(kb.leave_one_api_out("empty").is_ok());
        assert!(matches!(kb.leave_one_api_out("nope"), Err(KbError::UnknownApi(_))));
    }

    #[tokio::test]
    async fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(KB_FILE);
        {
            let mut kb = ParamKb::open(&path, OracleGateway::scripted(ScriptedBackend::new())).await.unwrap();
            kb.register_api("z").unwrap();
            kb.add(KbEntry::new("id", "G00048MO", KbSource::ResponseHarvest, "g.t", "g").with_description(Some("glycan.id"))).await.unwrap();
        }
        let kb = ParamKb::open(&path, OracleGateway::scripted(ScriptedBackend::new())).await.unwrap();
        assert_eq!(kb.len(), 1);
        assert_eq!(kb.apis().collect::<Vec<_>>(), vec!["g", "z"]);
        let c = kb.infer_candidates(&query("id")).await.unwrap();
        assert_eq!(c[0].value, "G00048MO");
    }
}
