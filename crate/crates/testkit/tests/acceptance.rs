//! Acceptance suite over the testkit. Prints one PASS/FAIL line per
//! criterion and fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use doc2tool_core::compiler::{
    compile_direct, compile_document, normalize_url_template, CompileError, MethodPolicy, NormalizedUrl, OptionalSegment, QuerySeed, ToolNamer,
    ToolSpec,
};
use doc2tool_core::docingest::{extract_api_json, load_document, ApiDocument};
use doc2tool_core::executor::{ExecError, Executor, ExecutorConfig, InvocationRecord};
use doc2tool_core::exporter::{emit_executable_tool, serve_tools, HARNESS_BEGIN, HARNESS_END};
use doc2tool_core::paramkb::{InferMode, ParamKb, ParamQuery, KB_FILE};
use doc2tool_core::pipeline::{
    load_api_docs, load_tools, open_kb, read_json, verified_toolset, GenerationMode, Layout, RefinementReport, REFINEMENT_FILE,
};
use doc2tool_core::refiner::{guard_check, RefinementTranscript};
use doc2tool_core::validator::{estimate_causes, ErrorLabel, RuleJudge, Validator};
use doc2tool_testkit::{docs_dir, oracle_dir, scripted_gateway, start_mock, Degradation, FaultMode, MockRoute, RequestLog, Testbed};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use serde_json::{json, Value};

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

// ---------------------------------------------------------------------------
// URL normalization

struct UrlCase {
    input: &'static str,
    template: &'static str,
    params: &'static [&'static str],
    suffix: Option<(&'static str, &'static str)>,
    seeds: &'static [(&'static str, Option<&'static str>)],
}

const fn case(input: &'static str, template: &'static str, params: &'static [&'static str]) -> UrlCase {
    UrlCase { input, template, params, suffix: None, seeds: &[] }
}

const URL_CASES: [UrlCase; 22] = [
    case("https://api.test/users/:id", "https://api.test/users/{id}", &["id"]),
    case("https://api.test/users/{id}", "https://api.test/users/{id}", &["id"]),
    case("https://api.test/users/<id>", "https://api.test/users/{id}", &["id"]),
    case("https://api.test/users/<int:id>", "https://api.test/users/{id}", &["id"]),
    case("https://api.test/users/{ id }", "https://api.test/users/{id}", &["id"]),
    case("https://api.test/users/:user_id/posts/{post_id}", "https://api.test/users/{user_id}/posts/{post_id}", &["user_id", "post_id"]),
    case("https://api.test/a/<x>/b/:y/c/{z}", "https://api.test/a/{x}/b/{y}/c/{z}", &["x", "y", "z"]),
    case("https://api.test:8080/users/:id", "https://api.test:8080/users/{id}", &["id"]),
    case("https://api.test/files/{name}.json", "https://api.test/files/{name}.json", &["name"]),
    case("https://api.test/range/{from}-{to}", "https://api.test/range/{from}-{to}", &["from", "to"]),
    case("https://api.test/pair/{id}/{id}", "https://api.test/pair/{id}/{id}", &["id"]),
    case("https://api.test/v1/time", "https://api.test/v1/time", &[]),
    case("https://api.test/docs#section", "https://api.test/docs", &[]),
    case("/v1/items/:item_id", "/v1/items/{item_id}", &["item_id"]),
    UrlCase { suffix: Some((".", "format")), ..case("https://api.test/items/{id}[.{format}]", "https://api.test/items/{id}", &["id"]) },
    UrlCase { suffix: Some((".", "fmt")), ..case("https://api.test/items[.{fmt}]", "https://api.test/items", &[]) },
    UrlCase { suffix: Some(("_", "v")), ..case("https://api.test/r/:id[_<v>]", "https://api.test/r/{id}", &["id"]) },
    UrlCase {
        seeds: &[("q", None), ("lang", Some("en"))],
        ..case("https://api.test/search?q={query}&lang=en", "https://api.test/search", &[])
    },
    UrlCase { seeds: &[("fields", Some("name"))], ..case("https://api.test/users/:id?fields=name", "https://api.test/users/{id}", &["id"]) },
    case("https://api.test/search?option=value&option=value", "https://api.test/search", &[]),
    UrlCase {
        suffix: Some((".", "format")),
        ..case(
            "http://http://ec2-3-129-135-45.us-east-2.compute.amazonaws.com:{profile}/{service}/v1/test/{coordinates}[.{format}]?option=value&option=value",
            "http://ec2-3-129-135-45.us-east-2.compute.amazonaws.com:{profile}/{service}/v1/test/{coordinates}",
            &["profile", "service", "coordinates"],
        )
    },
    UrlCase {
        seeds: &[("key", Some("demo")), ("id", None)],
        ..case("https://api.test/v2/<kind>?key=demo&id=<id>", "https://api.test/v2/{kind}", &["kind"])
    },
];

const MALFORMED_URLS: [&str; 6] = [
    "",
    "https://api.test/users/{id",
    "https://api.test/users/id}",
    "https://api.test/users/<>",
    "https://api.test/x[.{fmt}]/y",
    "https://api.test/x/{1abc}",
];

fn check_case(c: &UrlCase) -> Result<(), String> {
    let n = normalize_url_template(c.input).map_err(|e| format!("{}: {e}", c.input))?;
    let suffix = c.suffix.map(|(prefix, param)| OptionalSegment { prefix: prefix.into(), param: param.into() });
    let seeds: Vec<QuerySeed> = c.seeds.iter().map(|(n, v)| QuerySeed { name: (*n).into(), value: v.map(String::from) }).collect();
    let expected = NormalizedUrl {
        template: c.template.into(),
        path_params: c.params.iter().map(|s| s.to_string()).collect(),
        optional_suffix: suffix,
        query_seeds: seeds,
    };
    ensure!(n == expected, "{}: got {n:?}", c.input);
    Ok(())
}

/// One generated path segment: its documented form and its normalized form.
fn segment(i: usize) -> impl Strategy<Value = (String, String, Option<String>)> {
    let name = format!("p{i}");
    prop_oneof![
        "[a-z][a-z0-9]{0,7}".prop_map(|lit| (lit.clone(), lit, None)),
        Just((format!(":{name}"), format!("{{{name}}}"), Some(name.clone()))),
        Just((format!("{{{name}}}"), format!("{{{name}}}"), Some(name.clone()))),
        Just((format!("<{name}>"), format!("{{{name}}}"), Some(name.clone()))),
        Just((format!("<string:{name}>"), format!("{{{name}}}"), Some(name.clone()))),
        Just((format!("{{ {name} }}"), format!("{{{name}}}"), Some(name))),
    ]
}

fn generated_url() -> impl Strategy<Value = (String, String, Vec<String>, bool)> {
    let segments = (1usize..7).prop_flat_map(|n| (0..n).map(segment).collect::<Vec<_>>());
    (segments, any::<bool>(), prop::option::of("[a-z]{1,6}")).prop_map(|(segs, suffix, query)| {
        let mut url = String::from("https://gen.test");
        let mut template = url.clone();
        let mut params = Vec::new();
        for (doc, norm, name) in segs {
            url.push('/');
            url.push_str(&doc);
            template.push('/');
            template.push_str(&norm);
            params.extend(name);
        }
        if suffix {
            url.push_str("[.{format}]");
        }
        if let Some(q) = query {
            url.push_str(&format!("?{q}=1&k={{kv}}"));
        }
        (url, template, params, suffix)
    })
}

fn url_normalization() -> Verdict {
    let start = Instant::now();
    for c in &URL_CASES {
        check_case(c)?;
    }
    for bad in MALFORMED_URLS {
        ensure!(matches!(normalize_url_template(bad), Err(CompileError::MalformedUrl { .. })), "{bad:?} should be rejected");
    }
    runner(1000)
        .run(&generated_url(), |(url, template, params, suffix)| {
            let n = normalize_url_template(&url).map_err(|e| TestCaseError::fail(format!("{url}: {e}")))?;
            prop_assert_eq!(&n.template, &template);
            prop_assert_eq!(&n.path_params, &params);
            prop_assert_eq!(n.optional_suffix.is_some(), suffix);
            let again = normalize_url_template(&n.template).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&again.template, &n.template);
            prop_assert_eq!(&again.path_params, &n.path_params);
            prop_assert!(again.optional_suffix.is_none() && again.query_seeds.is_empty());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{} fixtures + {} malformed, 1000 generated templates idempotent, {elapsed:.0?}", URL_CASES.len(), MALFORMED_URLS.len()))
}

// ---------------------------------------------------------------------------
// Extraction fidelity

fn reference_osrm_endpoint() -> Value {
    json!({
        "name": "General Request",
        "description": "All OSRM HTTP requests use a common structure.",
        "method": "GET",
        "url": ["http://ec2-3-129-135-45.us-east-2.compute.amazonaws.com:{profile}/{service}/v1/test/{coordinates}[.{format}]?option=value&option=value"],
        "headers": [],
        "required_parameters": [
            {
                "name": "profile",
                "type": "string",
                "description": "Mode of transportation. One of the following three values: '5000' for car (driving), '5001' for bicycle (biking), and '5002' for foot (walking).",
                "default": null,
                "example": "5000"
            },
            {
                "name": "service",
                "type": "string",
                "description": "One of the following values: 'route', 'nearest', 'table', 'match', 'trip', 'tile'.",
                "default": null,
                "example": "route"
            }
        ],
        "optional_parameters": [
            {
                "name": "format",
                "type": "string",
                "description": "'json' or 'flatbuffers'. This parameter is optional and defaults to 'json'.",
                "default": "json",
                "example": "json"
            }
        ]
    })
}

async fn extraction_fidelity() -> Verdict {
    let gw = scripted_gateway(&oracle_dir()).map_err(|e| e.to_string())?;
    let raw = load_document(&docs_dir().join("osrm.md").display().to_string()).await.map_err(|e| e.to_string())?;
    let doc = extract_api_json(&gw, &raw).await.map_err(|e| e.to_string())?;
    ensure!(doc.title.as_deref() == Some("OSRM HTTP Router API Documentation"), "title {:?}", doc.title);
    ensure!(doc.endpoints.len() == 1, "{} endpoints", doc.endpoints.len());
    let got = serde_json::to_value(&doc.endpoints[0]).map_err(|e| e.to_string())?;
    let want = reference_osrm_endpoint();
    for key in ["name", "description", "method", "url", "headers", "optional_parameters"] {
        ensure!(got[key] == want[key], "{key}: got {} want {}", got[key], want[key]);
    }
    let required = got["required_parameters"].as_array().ok_or("no required parameters")?;
    let names: Vec<&str> = required.iter().filter_map(|p| p["name"].as_str()).collect();
    ensure!(names == ["profile", "service", "coordinates"], "required {names:?}");
    for (i, p) in want["required_parameters"].as_array().unwrap().iter().enumerate() {
        ensure!(&required[i] == p, "required[{i}]: got {} want {p}", required[i]);
    }
    Ok("OSRM document equals the reference field for field; required {profile, service, coordinates}, format defaults to json".into())
}

// ---------------------------------------------------------------------------
// Taxonomy

struct Scenario {
    name: &'static str,
    url: String,
    params: Value,
    expected: ErrorLabel,
    offline: bool,
}

async fn taxonomy(logs: &mut Vec<RequestLog>) -> Verdict {
    let mock = start_mock(vec![
        MockRoute::get("/ok", json!({"items": [{"id": 1}]})),
        MockRoute::get("/ok-text", json!("pong")),
        MockRoute::get("/soft-error", json!({"error": "quota exceeded"})),
        MockRoute::get("/empty", json!({})).with_fault(FaultMode::EmptyBody),
        MockRoute::get("/boom", json!({})).with_fault(FaultMode::Always500),
        MockRoute::get("/locked", json!({})).with_fault(FaultMode::AuthWall),
        MockRoute::get("/items/{id}", json!({"id": "A1"})).with_accept("id", &["A1"]),
        MockRoute::get("/search", json!({"hits": []})).with_required_query("q"),
    ])
    .await
    .map_err(|e| e.to_string())?;
    logs.push(mock.log().clone());
    let base = mock.base_url();
    let id = |example: Value| json!([{"name": "id", "type": "string", "description": "identifier", "example": example}]);
    let scenario = |name, url: String, params: Value, expected, offline| Scenario { name, url, params, expected, offline };
    use ErrorLabel::*;
    let scenarios = vec![
        scenario("json listing", format!("{base}/ok"), json!([]), PassedValidation, false),
        scenario("text answer", format!("{base}/ok-text"), json!([]), PassedValidation, false),
        scenario("200 carrying an error", format!("{base}/soft-error"), json!([]), FailedValidation, false),
        scenario("200 with empty body", format!("{base}/empty"), json!([]), FailedValidation, false),
        scenario("server error", format!("{base}/boom"), json!([]), AbnormalResponse, false),
        scenario("auth wall", format!("{base}/locked"), json!([]), AbnormalResponse, false),
        scenario("unknown route", format!("{base}/nowhere/{{id}}"), id(json!("A1")), MissingEndpointPath, false),
        scenario("host without path", base.clone(), json!([]), MissingEndpointPath, true),
        scenario("relative path", "/v1/things".into(), json!([]), MissingBaseUrl, true),
        scenario("relative templated path", "things/{id}".into(), id(json!("A1")), MissingBaseUrl, true),
        scenario("path parameter without example", format!("{base}/items/{{id}}"), id(Value::Null), NoParameterValue, true),
        scenario("query parameter without example", format!("{base}/search"), json!([{"name": "q", "type": "string"}]), NoParameterValue, true),
        scenario("unknown identifier", format!("{base}/items/{{id}}"), id(json!("ZZ")), WrongParameterValue, false),
        scenario("missing required query", format!("{base}/search"), json!([]), WrongParameterValue, false),
    ];
    let executor = Arc::new(
        Executor::new(ExecutorConfig { timeout: Duration::from_secs(5), courtesy_delay: Duration::ZERO, ..ExecutorConfig::default() })
            .map_err(|e| e.to_string())?,
    );
    let validator = Validator::new(executor, Arc::new(RuleJudge));
    let mut per_label: BTreeMap<ErrorLabel, usize> = BTreeMap::new();
    for s in &scenarios {
        let doc: ApiDocument = serde_json::from_value(json!({
            "title": "Taxonomy", "source_id": "taxonomy",
            "endpoints": [{"name": s.name, "method": "GET", "url": [s.url], "required_parameters": s.params}]
        }))
        .map_err(|e| e.to_string())?;
        let compiled = compile_document(&doc, &MethodPolicy::default(), &mut ToolNamer::new());
        let tool = compiled.tools.into_iter().chain(compiled.unresolved).next().ok_or_else(|| format!("{}: not compiled", s.name))?;
        mock.log().clear();
        let attempt = validator.attempt(&tool, 0).await;
        ensure!(attempt.label == s.expected, "{}: got {} want {}", s.name, attempt.label, s.expected);
        if s.offline {
            ensure!(mock.log().is_empty(), "{}: made {} request(s)", s.name, mock.log().len());
        }
        *per_label.entry(s.expected).or_default() += 1;
    }
    ensure!(ErrorLabel::ALL.iter().all(|l| per_label.get(l) == Some(&2)), "coverage {per_label:?}");
    Ok(format!("{} scenarios, 2 per label, NoParameterValue made no requests", scenarios.len()))
}

// ---------------------------------------------------------------------------
// Cause algebra

fn cause_algebra() -> Verdict {
    let labels = prop::collection::vec(prop::sample::select(ErrorLabel::ALL.to_vec()), 0..200);
    runner(1000)
        .run(&labels, |labels| {
            let e = estimate_causes(&labels);
            let (c, a) = (e.conservative.as_array(), e.aggressive.as_array());
            prop_assert!(c.iter().zip(&a).all(|(c, a)| c <= a), "{c:?} vs {a:?}");
            prop_assert_eq!(c[0], 0);
            prop_assert_eq!(c[3], 0);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    use ErrorLabel::*;
    let counts = [
        (MissingEndpointPath, 2),
        (MissingBaseUrl, 1),
        (WrongParameterValue, 3),
        (FailedValidation, 2),
        (NoParameterValue, 4),
        (AbnormalResponse, 1),
    ];
    let worked: Vec<ErrorLabel> = counts.iter().flat_map(|(l, n)| std::iter::repeat_n(*l, *n)).collect();
    let e = estimate_causes(&worked);
    ensure!(e.conservative.as_array() == [0, 2, 5, 0], "conservative {:?}", e.conservative.as_array());
    ensure!(e.aggressive.as_array() == [5, 3, 10, 3], "aggressive {:?}", e.aggressive.as_array());
    Ok("1000 multisets hold; worked example gives (0,2,5,0) and (5,3,10,3)".into())
}

// ---------------------------------------------------------------------------
// Refinement lift

/// Ten revisions of an emitted tool that each break the protected harness.
fn tampered_sources(source: &str) -> Vec<(&'static str, String)> {
    let call = source.lines().find(|l| l.starts_with("    r = ")).expect("example call").to_string();
    vec![
        ("edited capture line", source.replace("result_dict['status_code'] = r.status_code", "result_dict['status_code'] = 200")),
        ("begin marker removed", source.replace(&format!("{HARNESS_BEGIN}\n"), "")),
        ("end marker removed", source.replace(HARNESS_END, "")),
        ("begin marker re-indented", source.replace(HARNESS_BEGIN, &format!("  {HARNESS_BEGIN}"))),
        ("code after the harness", format!("{source}\n    print('{{\"status_code\": 200}}')\n")),
        ("call wrapped in try", source.replace(&call, &format!("    try:\n    {call}\n    except Exception:\n        r = None"))),
        ("second statement in main", source.replace(&call, &format!("{call}\n    r.status_code = 200"))),
        ("print rebound", source.replace("\n\nif __name__", "\n\ndef print(*args, **kwargs):\n    pass\n\n\nif __name__")),
        ("contextlib suppression", source.replacen("import requests", "import contextlib\nimport requests", 1)),
        ("module-level try", source.replacen("import requests", "try:\n    import requests\nexcept Exception:\n    requests = None", 1)),
    ]
}

fn guard_soundness(tool: &ToolSpec) -> Result<usize, String> {
    let source = emit_executable_tool(tool);
    guard_check(tool, &source).map_err(|e| format!("untampered source rejected: {e}"))?;
    let mut changed = tool.clone();
    if let Some(b) = changed.example_binding.as_mut() {
        b.insert("service".into(), "nearest".into());
    }
    guard_check(tool, &emit_executable_tool(&changed)).map_err(|e| format!("value change rejected: {e}"))?;
    let tampered = tampered_sources(&source);
    for (name, src) in &tampered {
        ensure!(src != &source, "{name}: mutation did not apply");
        ensure!(guard_check(tool, src).is_err(), "{name}: accepted");
    }
    Ok(tampered.len())
}

fn missing_param_recovered_by_donor(layout: &Layout, tool: &ToolSpec, doc: &str) -> bool {
    let Ok(t) = read_json::<RefinementTranscript>(&layout.refinements_dir().join(format!("{}.refine.json", tool.tool_id))) else { return false };
    if t.initial_label != ErrorLabel::NoParameterValue || t.final_label != ErrorLabel::PassedValidation {
        return false;
    }
    let (Some(last), Some(binding)) = (t.rounds.last(), tool.example_binding.as_ref()) else { return false };
    last.ticket
        .candidates
        .iter()
        .any(|set| binding.get(&set.param).is_some_and(|v| set.candidates.iter().any(|c| &c.value == v && c.provenance.source_api != doc)))
}

async fn run_corpus(bed: &Testbed, out: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    let gw = scripted_gateway(&oracle_dir()).map_err(|e| e.to_string())?;
    bed.run_pipeline(gw, GenerationMode::Direct, out).await.map_err(|e| e.to_string())?;
    Ok(start.elapsed())
}

async fn refinement_lift(bed: &Testbed, out: &Path) -> Verdict {
    let elapsed = run_corpus(bed, out).await?;
    let layout = Layout::new(out);
    let refinement: RefinementReport = read_json(&layout.file(REFINEMENT_FILE)).map_err(|e| e.to_string())?;
    ensure!(refinement.passed_after > refinement.passed_before, "{} -> {}", refinement.passed_before, refinement.passed_after);

    let tools = load_tools(&layout).map_err(|e| e.to_string())?;
    let missing_param_docs: Vec<&str> = bed.corpus.docs.iter().filter(|d| d.has(Degradation::NoExamples)).map(|d| d.id.as_str()).collect();
    let recovered: BTreeSet<&str> = missing_param_docs
        .iter()
        .copied()
        .filter(|doc| tools.iter().any(|t| t.source.source_id == *doc && missing_param_recovered_by_donor(&layout, t, doc)))
        .collect();
    ensure!(recovered.len() >= 2, "recovered via donors: {recovered:?} of {missing_param_docs:?}");

    let osrm = tools.iter().find(|t| t.source.source_id == "osrm").ok_or("no OSRM tool")?;
    let rejected = guard_soundness(osrm)?;
    let tamper_doc = bed.corpus.docs.iter().find(|d| d.tamper).ok_or("no tampering doc")?;
    let tamper_tool = tools.iter().find(|t| t.source.source_id == tamper_doc.id).ok_or("no tool for the tampering doc")?;
    let t: RefinementTranscript =
        read_json(&layout.refinements_dir().join(format!("{}.refine.json", tamper_tool.tool_id))).map_err(|e| e.to_string())?;
    ensure!(!t.rounds.is_empty() && t.rounds.iter().all(|r| r.error.is_some()), "tampered revisions from the oracle were not all rejected");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "passed {} -> {}, donors recovered {recovered:?}, guard rejected {rejected}/{rejected} tampered harnesses, {elapsed:.1?}",
        refinement.passed_before, refinement.passed_after
    ))
}

// ---------------------------------------------------------------------------
// Parameter inference recall

/// API, parameter, and the ranked (value, score) candidates.
type Ranking = (String, String, Vec<(String, String)>);

#[derive(Debug, PartialEq)]
struct RecallRun {
    eligible: usize,
    hits: usize,
    services: usize,
    total: usize,
    ranked: Vec<Ranking>,
    sampled: Vec<Vec<String>>,
}

async fn recall_over(bed: &Testbed, out: &Path) -> Result<RecallRun, String> {
    let layout = Layout::new(out);
    let gw = scripted_gateway(&oracle_dir()).map_err(|e| e.to_string())?;
    let kb: ParamKb = open_kb(&out.join(KB_FILE), &gw).await.map_err(|e| e.to_string())?;
    let tools = load_tools(&layout).map_err(|e| e.to_string())?;
    let truth = bed.corpus.ground_truth();
    let services: BTreeSet<&str> = truth.iter().map(|(d, _, _)| d.as_str()).collect();
    let mut run = RecallRun { eligible: 0, hits: 0, services: services.len(), total: truth.len(), ranked: Vec::new(), sampled: Vec::new() };
    for (api, param, value) in &truth {
        let Some((tool, p)) = tools.iter().filter(|t| &t.source.source_id == api).find_map(|t| t.param(param).map(|p| (t, p))) else { continue };
        if !kb.entries().iter().any(|e| &e.source_api != api && &e.value == value) {
            continue;
        }
        run.eligible += 1;
        let view = kb.leave_one_api_out(api).map_err(|e| e.to_string())?;
        let q = ParamQuery::for_param(tool, p);
        let top = view.infer_candidates(&q, InferMode::TopK).await.map_err(|e| e.to_string())?;
        if top.iter().take(10).any(|c| &c.value == value) {
            run.hits += 1;
        }
        run.ranked.push((api.clone(), param.clone(), top.iter().map(|c| (c.value.clone(), format!("{:.9}", c.score))).collect()));
        let sampled = view.infer_candidates(&q, InferMode::Sample { seed: 0 }).await.map_err(|e| e.to_string())?;
        run.sampled.push(sampled.into_iter().map(|c| c.value).collect());
    }
    Ok(run)
}

async fn inference_recall(bed: &Testbed, out: &Path) -> Verdict {
    let first = recall_over(bed, out).await?;
    let again = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_corpus(bed, again.path()).await?;
    let second = recall_over(bed, again.path()).await?;
    ensure!(first.total >= 30 && first.services >= 5, "{} parameters over {} services", first.total, first.services);
    ensure!(first.eligible > 0, "no parameter has a donor value");
    let recall = first.hits as f64 / first.eligible as f64;
    ensure!(recall >= 0.9, "recall {recall:.3} ({}/{})", first.hits, first.eligible);
    ensure!(first == second, "candidate lists differ between runs");
    Ok(format!(
        "top-10 recall {:.1}% ({}/{} with donors; {} parameters over {} services), identical across runs",
        recall * 100.0,
        first.hits,
        first.eligible,
        first.total,
        first.services
    ))
}

// ---------------------------------------------------------------------------
// Service equivalence

async fn service_equivalence(bed: &Testbed, out: &Path) -> Verdict {
    let layout = Layout::new(out);
    let set = verified_toolset(&layout).map_err(|e| e.to_string())?;
    let executor = bed.executor();
    let service = serve_tools(set.clone(), executor.clone(), "127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let client = reqwest::Client::new();
    for tool in set.tools() {
        let example = tool.example_binding.clone().unwrap_or_default();
        let direct = executor.call(tool, &example).await.map_err(|e| format!("{}: {e}", tool.name))?;
        let resp = client
            .post(format!("{}/tools/{}/invoke", service.base_url(), tool.name))
            .body(serde_json::to_string(&example).map_err(|e| e.to_string())?)
            .send()
            .await
            .map_err(|e| e.to_string())?;
        let body = resp.text().await.map_err(|e| e.to_string())?;
        let served: InvocationRecord = serde_json::from_str(&body).map_err(|e| format!("{}: {e}: {body}", tool.name))?;
        ensure!(served.core() == direct.core(), "{}: served {} vs direct {}", tool.name, served.core(), direct.core());
    }
    let n = set.len();
    service.shutdown().await;
    Ok(format!("{n} verified tools return the same status_code/text/json/content through the service"))
}

// ---------------------------------------------------------------------------
// Safety

async fn safety(bed: &Testbed, out: &Path, logs: &[RequestLog]) -> Verdict {
    let layout = Layout::new(out);
    let docs = load_api_docs(&layout).map_err(|e| e.to_string())?;
    let catalog = docs.iter().find(|d| d.source_id == "shop_catalog").ok_or("no catalog document")?;
    let compiled = compile_document(catalog, &MethodPolicy::default(), &mut ToolNamer::new());
    let delete = compiled.rejected.iter().find(|(ep, _)| ep.contains("Delete")).ok_or("DELETE endpoint was not rejected")?;
    ensure!(matches!(delete.1, CompileError::MethodDisallowed { .. }), "DELETE rejected with {}", delete.1);

    let endpoint = catalog.endpoints.iter().find(|e| e.method == "DELETE").ok_or("no DELETE endpoint")?;
    let tool = compile_direct(endpoint, catalog).map_err(|e| e.to_string())?;
    let before = bed.mock.log().len();
    let refused = bed.executor().call(&tool, &tool.example_binding.clone().unwrap_or_default()).await;
    ensure!(matches!(refused, Err(ExecError::MethodDisallowed { .. })), "executor ran a DELETE: {refused:?}");
    ensure!(bed.mock.log().len() == before, "DELETE reached the mock");

    let mut total = 0;
    for log in logs {
        ensure!(log.non_get().is_empty(), "non-GET requests: {:?}", log.non_get());
        total += log.len();
    }
    Ok(format!("0 non-GET among {total} mock requests; DELETE rejected at compile time and by the executor"))
}

// ---------------------------------------------------------------------------

fn report(name: &str, verdict: &Verdict) {
    match verdict {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(reason) => println!("FAIL {name}: {reason}"),
    }
}

async fn run_all() -> bool {
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut logs = Vec::new();
    let mut record = |name, verdict: Verdict| {
        report(name, &verdict);
        results.push((name, verdict));
    };
    record("url normalization", url_normalization());
    record("extraction fidelity", extraction_fidelity().await);
    record("taxonomy exactness", taxonomy(&mut logs).await);
    record("cause estimation algebra", cause_algebra());

    let bed = match Testbed::start().await {
        Ok(b) => b,
        Err(e) => {
            println!("FAIL testbed: {e}");
            return false;
        }
    };
    logs.push(bed.mock.log().clone());
    let out = tempfile::tempdir().expect("temp dir");
    record("refinement lift", refinement_lift(&bed, out.path()).await);
    record("parameter inference recall", inference_recall(&bed, out.path()).await);
    record("service equivalence", service_equivalence(&bed, out.path()).await);
    record("safety", safety(&bed, out.path(), &logs).await);

    let failed = results.iter().filter(|(_, v)| v.is_err()).count();
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    failed == 0
}

fn main() -> ExitCode {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    if runtime.block_on(run_all()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
