//! The `doc2tool` binary against the corpus mock with recorded oracle answers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Output;
use std::time::Duration;

use doc2tool_core::paramkb::KB_FILE;
use doc2tool_core::pipeline::{open_kb, GenerationMode, Layout};
use doc2tool_testkit::{docs_dir, oracle_dir, scripted_gateway, Testbed};
use serde_json::Value;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::process::Command;

const STAGES: [&str; 6] = ["extract", "compile", "validate", "refine", "export", "report"];

fn doc2tool() -> Command {
    Command::new(env!("CARGO_BIN_EXE_doc2tool"))
}

/// Flags that point the binary at the mock with the recorded oracle.
fn offline_args(bed: &Testbed, out: &Path) -> Vec<String> {
    let mut args: Vec<String> = vec![
        "--input".into(),
        docs_dir().display().to_string(),
        "--out".into(),
        out.display().to_string(),
        "--llm-backend".into(),
        "scripted".into(),
        "--fixtures".into(),
        oracle_dir().display().to_string(),
        "--courtesy-ms".into(),
        "0".into(),
        "--timeout-secs".into(),
        "5".into(),
    ];
    for r in bed.corpus.rewrites(&bed.mock.base_url()) {
        args.push("--rewrite".into());
        args.push(format!("{}={}", r.from, r.to));
    }
    args
}

async fn stage(bed: &Testbed, out: &Path, name: &str, extra: &[&str]) -> Output {
    let out = doc2tool().arg(name).args(offline_args(bed, out)).args(extra).output().await.expect("spawn doc2tool");
    assert!(out.status.success(), "{name} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

async fn run_stages(bed: &Testbed, out: &Path) {
    for name in STAGES {
        stage(bed, out, name, &[]).await;
    }
}

fn mask(v: &mut Value) {
    match v {
        Value::Object(m) => {
            for (k, x) in m.iter_mut() {
                if k == "x_started_at" || k == "x_elapsed_ms" {
                    *x = Value::Null;
                } else {
                    mask(x);
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(mask),
        _ => {}
    }
}

/// Every file under `root`, JSON with timing fields masked.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
                continue;
            }
            let text = std::fs::read_to_string(&p).unwrap();
            let text = match serde_json::from_str::<Value>(&text) {
                Ok(mut v) if p.extension().is_some_and(|x| x == "json") => {
                    mask(&mut v);
                    v.to_string()
                }
                _ => text,
            };
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), text);
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn assert_same(a: &BTreeMap<PathBuf, String>, b: &BTreeMap<PathBuf, String>, what: &str) {
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>(), "{what}: file sets differ");
    for (k, v) in a {
        assert_eq!(v, &b[k], "{what}: {} differs", k.display());
    }
}

#[tokio::test]
async fn extract_writes_one_document_per_api_page() {
    let bed = Testbed::start().await.unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = stage(&bed, out.path(), "extract", &[]).await;
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    let api_docs = bed.corpus.docs.iter().filter(|d| d.has_api).count();
    assert_eq!(api_docs, 12);
    assert_eq!(summary["extracted"], api_docs);
    let files = std::fs::read_dir(out.path().join("api"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".api.json"))
        .count();
    assert_eq!(files, api_docs);
}

#[tokio::test]
async fn unknown_subcommand_is_a_config_error() {
    let o = doc2tool().arg("frobnicate").output().await.unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[tokio::test]
async fn invalid_settings_exit_2() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().display().to_string();
    let cases: [&[&str]; 4] = [
        &["report", "--out", &dir, "--jobs", "0"],
        &["report", "--out", &dir, "--allow-methods", "GET,FETCH"],
        &["compile", "--out", &dir, "--llm-backend", "scripted"],
        &["extract", "--out", &dir, "--llm-backend", "scripted", "--fixtures", &dir],
    ];
    for args in cases {
        let o = doc2tool().args(args).output().await.unwrap();
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[tokio::test]
async fn missing_stage_inputs_exit_3() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().display().to_string();
    for name in ["validate", "refine", "report", "export"] {
        let o = doc2tool().args([name, "--out", &dir, "--llm-backend", "scripted", "--fixtures", &dir]).output().await.unwrap();
        assert_eq!(o.status.code(), Some(3), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[tokio::test]
async fn flags_override_the_config_file() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("config.json");
    std::fs::write(&cfg, r#"{"jobs": 0}"#).unwrap();
    let dir = out.path().join("empty").display().to_string();
    let base = ["report", "--out", dir.as_str(), "--config", cfg.to_str().unwrap()];
    let o = doc2tool().args(base).output().await.unwrap();
    assert_eq!(o.status.code(), Some(2), "jobs 0 from the file is rejected");
    let o = doc2tool().args(base).args(["--jobs", "2"]).output().await.unwrap();
    assert_eq!(o.status.code(), Some(3), "the flag wins, then report finds no validation");

    std::fs::write(&cfg, r#"{"jobz": 1}"#).unwrap();
    let o = doc2tool().args(base).output().await.unwrap();
    assert_eq!(o.status.code(), Some(2), "unknown config keys are rejected");
}

#[tokio::test]
async fn stages_run_one_at_a_time_equal_the_chained_pipeline() {
    let bed = Testbed::start().await.unwrap();
    let single = tempfile::tempdir().unwrap();
    run_stages(&bed, single.path()).await;

    let chained = tempfile::tempdir().unwrap();
    let gw = scripted_gateway(&oracle_dir()).unwrap();
    let mut kb = open_kb(&chained.path().join(KB_FILE), &gw).await.unwrap();
    bed.pipeline(gw, GenerationMode::Direct).run_all(&docs_dir(), &Layout::new(chained.path()), &mut kb).await.unwrap();

    let a = snapshot(single.path());
    assert!(a.keys().any(|k| k.starts_with("export")), "exported tools present");
    assert_same(&a, &snapshot(chained.path()), "stages vs chained");
}

#[tokio::test]
async fn rerunning_a_stage_changes_nothing() {
    let bed = Testbed::start().await.unwrap();
    let out = tempfile::tempdir().unwrap();
    for name in STAGES {
        stage(&bed, out.path(), name, &[]).await;
        let before = snapshot(out.path());
        stage(&bed, out.path(), name, &[]).await;
        assert_same(&before, &snapshot(out.path()), name);
    }
    let refined: Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("refinement.json")).unwrap()).unwrap();
    assert!(refined["passed_after"].as_u64() > refined["passed_before"].as_u64());
}

#[tokio::test]
async fn report_renders_markdown() {
    let bed = Testbed::start().await.unwrap();
    let out = tempfile::tempdir().unwrap();
    for name in ["extract", "compile", "validate"] {
        stage(&bed, out.path(), name, &[]).await;
    }
    let o = stage(&bed, out.path(), "report", &[]).await;
    let md = String::from_utf8(o.stdout).unwrap();
    assert!(md.starts_with("# Tool validation report"));
    assert!(md.contains("## Estimated error causes"));
    assert!(md.contains("## By documentation quality"));
    assert_eq!(md, std::fs::read_to_string(out.path().join("report.md")).unwrap());
}

#[tokio::test]
async fn infer_prints_ranked_candidates_deterministically() {
    let bed = Testbed::start().await.unwrap();
    let out = tempfile::tempdir().unwrap();
    for name in ["extract", "compile", "validate"] {
        stage(&bed, out.path(), name, &[]).await;
    }
    let tools: Vec<Value> = std::fs::read_dir(out.path().join("tools"))
        .unwrap()
        .map(|e| serde_json::from_str(&std::fs::read_to_string(e.unwrap().path()).unwrap()).unwrap())
        .collect();
    let motif = tools.iter().find(|t| t["source"]["source_id"] == "glycan_motif").expect("glycan motif tool");
    let id = motif["tool_id"].as_str().unwrap();

    let o = stage(&bed, out.path(), "infer", &["--tool", id, "--leave-out", "glycan_motif"]).await;
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["tool"], id);
    let params = v["params"].as_array().unwrap();
    assert!(!params.is_empty());
    let values: Vec<&str> = params[0]["candidates"].as_array().unwrap().iter().map(|c| c["value"].as_str().unwrap()).collect();
    assert!(values.contains(&"G00048MO"), "{values:?}");
    assert!(values.len() <= 10);

    let args = ["--tool", id, "--sample", "--seed", "0"];
    let first = stage(&bed, out.path(), "infer", &args).await.stdout;
    let second = stage(&bed, out.path(), "infer", &args).await.stdout;
    assert_eq!(first, second);
}

#[tokio::test]
async fn serve_lists_the_exported_tools() {
    let bed = Testbed::start().await.unwrap();
    let out = tempfile::tempdir().unwrap();
    run_stages(&bed, out.path()).await;
    let exported = std::fs::read_dir(out.path().join("export")).unwrap().count();

    let mut child = doc2tool()
        .arg("serve")
        .args(offline_args(&bed, out.path()))
        .args(["--bind", "127.0.0.1:0"])
        .stdout(std::process::Stdio::piped())
        .kill_on_drop(true)
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let line = tokio::time::timeout(Duration::from_secs(10), lines.next_line()).await.unwrap().unwrap().unwrap();
    let base = line.strip_prefix("listening on ").expect("listen line").to_string();
    let listed: Value = reqwest::get(format!("{base}/tools")).await.unwrap().json().await.unwrap();
    assert_eq!(listed.as_array().map(|a| a.len()), Some(exported));
    child.kill().await.unwrap();
}
