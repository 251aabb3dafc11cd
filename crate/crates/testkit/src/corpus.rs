//! The fixture corpus: twelve API documentation pages with authored
//! degradations, one navigation-only distractor, the mock routes that stand
//! in for each documented service and the true parameter values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use doc2tool_core::docingest::DocQuality;
use doc2tool_core::executor::UpstreamRewrite;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::mock::MockRoute;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("fixture {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Degradation {
    NoBaseUrl,
    NoExamples,
    WrongExample,
    UnlabeledParams,
    ColonPathParams,
    AngleBracketParams,
}

impl Degradation {
    pub const ALL: [Degradation; 6] = [
        Degradation::NoBaseUrl,
        Degradation::NoExamples,
        Degradation::WrongExample,
        Degradation::UnlabeledParams,
        Degradation::ColonPathParams,
        Degradation::AngleBracketParams,
    ];
}

/// The upstream a documented host maps to on the mock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockService {
    /// URL prefix as written in the extracted documentation.
    pub origin: String,
    /// Paths relative to the service prefix `/{doc id}` on the mock.
    pub routes: Vec<MockRoute>,
}

fn quality_label<'de, D: Deserializer<'de>>(d: D) -> Result<DocQuality, D::Error> {
    let s = String::deserialize(d)?;
    DocQuality::from_label(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown quality {s}")))
}

/// One documentation page plus everything the scripted author knows about it.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FixtureDoc {
    pub id: String,
    pub file: String,
    /// Text unique to this page, used to recognise it inside prompts.
    pub marker: String,
    pub has_api: bool,
    #[serde(deserialize_with = "quality_label")]
    pub quality: DocQuality,
    pub analysis: String,
    #[serde(default)]
    pub degradations: Vec<Degradation>,
    /// Authored extraction answer (the API-extraction schema).
    pub extraction: Option<Value>,
    /// Schema-violating first answer, exercising the extraction retry.
    #[serde(default)]
    pub bad_first_extraction: Option<Value>,
    #[serde(default)]
    pub fingerprints: Vec<Value>,
    /// The author answers refinement requests with a tampered harness.
    #[serde(default)]
    pub tamper: bool,
    /// Parameter-guess answers, tried in order.
    #[serde(default)]
    pub guesses: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub service: Option<MockService>,
    /// True value of every parameter of the documented API.
    #[serde(default)]
    pub ground_truth: BTreeMap<String, String>,
    #[serde(skip)]
    pub text: String,
}

impl FixtureDoc {
    pub fn title(&self) -> Option<&str> {
        self.extraction.as_ref()?.get("title")?.as_str()
    }

    pub fn has(&self, d: Degradation) -> bool {
        self.degradations.contains(&d)
    }

    /// Source id the pipeline derives from the file name.
    pub fn source_id(&self) -> &str {
        &self.id
    }

    fn check(&self) -> Result<(), CorpusError> {
        let bad = |reason: &str| Err(CorpusError::Invalid { id: self.id.clone(), reason: reason.into() });
        if self.quality == DocQuality::FullyOrganized && !self.degradations.is_empty() {
            return bad("a fully organized doc carries no degradations");
        }
        if self.has_api != self.extraction.is_some() {
            return bad("API docs need an extraction answer, distractors none");
        }
        if !self.text.contains(&self.marker) {
            return bad("marker does not occur in the page");
        }
        Ok(())
    }
}

macro_rules! fixture {
    ($id:literal, $file:literal) => {
        ($id, include_str!(concat!("../fixtures/corpus/", $id, ".json")), $file, include_str!(concat!("../fixtures/docs/", $file)))
    };
}

const FIXTURES: [(&str, &str, &str, &str); 13] = [
    fixture!("osrm", "osrm.md"),
    fixture!("glytoucan", "glytoucan.md"),
    fixture!("glycan_motif", "glycan_motif.md"),
    fixture!("shop_catalog", "shop_catalog.html"),
    fixture!("shop_inventory", "shop_inventory.md"),
    fixture!("shop_reviews", "shop_reviews.html"),
    fixture!("weather", "weather.md"),
    fixture!("itsthisforthat", "itsthisforthat.html"),
    fixture!("zipinfo", "zipinfo.md"),
    fixture!("image_charts", "image_charts.html"),
    fixture!("status_api", "status_api.md"),
    fixture!("license_api", "license_api.md"),
    fixture!("index", "index.html"),
];

/// Directory holding the corpus pages in the source tree.
pub fn docs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("docs")
}

/// Directory holding the recorded scripted-oracle fixtures.
pub fn oracle_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("oracle")
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub docs: Vec<FixtureDoc>,
    pub distractors: Vec<FixtureDoc>,
}

/// The embedded corpus.
pub fn build_corpus() -> Result<Corpus, CorpusError> {
    let mut docs = Vec::new();
    let mut distractors = Vec::new();
    for (id, spec, file, text) in FIXTURES {
        let mut doc: FixtureDoc = serde_json::from_str(spec).map_err(|e| CorpusError::Invalid { id: id.to_string(), reason: e.to_string() })?;
        if doc.id != id || doc.file != file {
            return Err(CorpusError::Invalid { id: id.to_string(), reason: "id or file name mismatch".into() });
        }
        doc.text = text.to_string();
        doc.check()?;
        if doc.has_api {
            docs.push(doc);
        } else {
            distractors.push(doc);
        }
    }
    let all: Vec<&FixtureDoc> = docs.iter().chain(&distractors).collect();
    for d in &all {
        let clashes = all.iter().filter(|o| o.text.contains(&d.marker)).count();
        if clashes != 1 {
            return Err(CorpusError::Invalid { id: d.id.clone(), reason: "marker is not unique".into() });
        }
    }
    Ok(Corpus { docs, distractors })
}

impl Corpus {
    pub fn doc(&self, id: &str) -> Option<&FixtureDoc> {
        self.docs.iter().chain(&self.distractors).find(|d| d.id == id)
    }

    pub fn all(&self) -> impl Iterator<Item = &FixtureDoc> {
        self.docs.iter().chain(&self.distractors)
    }

    /// Every route of every service, prefixed with `/{doc id}`.
    pub fn mock_routes(&self) -> Vec<MockRoute> {
        let mut out = Vec::new();
        for d in &self.docs {
            for r in d.service.iter().flat_map(|s| &s.routes) {
                let mut r = r.clone();
                r.path = format!("/{}{}", d.id, r.path);
                out.push(r);
            }
        }
        out
    }

    /// Rewrites sending each documented origin to its prefix on the mock.
    pub fn rewrites(&self, mock_base: &str) -> Vec<UpstreamRewrite> {
        let base = mock_base.trim_end_matches('/');
        self.docs
            .iter()
            .filter_map(|d| d.service.as_ref().map(|s| (d, s)))
            .map(|(d, s)| {
                // A host ending in ':' is followed by a templated port; the
                // placeholder becomes the first path segment on the mock.
                let to = if s.origin.ends_with(':') { format!("{base}/{}/", d.id) } else { format!("{base}/{}", d.id) };
                UpstreamRewrite { from: s.origin.clone(), to }
            })
            .collect()
    }

    /// Copy the corpus pages into `dir` and return it.
    pub fn write_docs(&self, dir: &Path) -> Result<PathBuf, CorpusError> {
        std::fs::create_dir_all(dir).map_err(|e| CorpusError::Io { path: dir.display().to_string(), reason: e.to_string() })?;
        for d in self.all() {
            let p = dir.join(&d.file);
            std::fs::write(&p, &d.text).map_err(|e| CorpusError::Io { path: p.display().to_string(), reason: e.to_string() })?;
        }
        Ok(dir.to_path_buf())
    }

    /// (doc id, parameter, true value) for every documented parameter.
    pub fn ground_truth(&self) -> Vec<(String, String, String)> {
        self.docs.iter().flat_map(|d| d.ground_truth.iter().map(move |(k, v)| (d.id.clone(), k.clone(), v.clone()))).collect()
    }

    pub fn qualities(&self) -> BTreeSet<DocQuality> {
        self.docs.iter().map(|d| d.quality).collect()
    }

    pub fn degradations(&self) -> BTreeSet<Degradation> {
        self.docs.iter().flat_map(|d| d.degradations.iter().copied()).collect()
    }

    /// Ids of docs whose ground truth assigns one of the values of `param`
    /// in `owner` to some parameter.
    pub fn sharing_values_with(&self, owner: &str, param: &str) -> Vec<String> {
        let Some(value) = self.doc(owner).and_then(|d| d.ground_truth.get(param)) else { return Vec::new() };
        self.docs.iter().filter(|d| d.id != owner && d.ground_truth.values().any(|v| v == value)).map(|d| d.id.clone()).collect()
    }
}
