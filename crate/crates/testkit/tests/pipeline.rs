//! Whole-corpus pipeline properties with recorded oracle answers, and the
//! parameter-guess path of the refinement loop.

use doc2tool_core::compiler::{MethodPolicy, ToolStatus};
use doc2tool_core::paramkb::{ParamKb, KB_FILE};
use doc2tool_core::pipeline::{
    load_api_docs, load_tools, open_kb, read_json, run_compile, run_extract, GenerationMode, Layout, RefinementReport, ValidationReport,
    REFINEMENT_FILE, VALIDATION_FILE,
};
use doc2tool_core::refiner::{RefinementTranscript, Refiner, DEFAULT_MAX_ROUNDS};
use doc2tool_core::validator::{ErrorLabel, JudgeClassification};
use doc2tool_testkit::{author_gateway, docs_dir, oracle_dir, scripted_gateway, Testbed};

#[tokio::test]
async fn refinement_respects_budget_and_only_adds_passes() {
    let bed = Testbed::start().await.unwrap();
    let out = tempfile::tempdir().unwrap();
    let gw = scripted_gateway(&oracle_dir()).unwrap();
    bed.run_pipeline(gw.clone(), GenerationMode::Direct, out.path()).await.unwrap();
    let layout = Layout::new(out.path());

    let before: ValidationReport = read_json(&layout.file(VALIDATION_FILE)).unwrap();
    let after: RefinementReport = read_json(&layout.file(REFINEMENT_FILE)).unwrap();
    assert!(after.passed_after >= after.passed_before);
    assert_eq!(after.passed_before, before.passed);
    for o in before.outcomes.iter().filter(|o| o.verified) {
        assert!(after.report.outcome(&o.tool_id).unwrap().verified, "{} regressed", o.tool_id);
    }

    let tools = load_tools(&layout).unwrap();
    let kb = open_kb(&out.path().join(KB_FILE), &gw).await.unwrap();
    for tool in &tools {
        let outcome = after.report.outcome(&tool.tool_id).unwrap();
        assert_eq!(tool.status == ToolStatus::Passed, outcome.verified, "{}", tool.tool_id);
        if outcome.verified {
            let last = outcome.last_attempt();
            assert_eq!(last.label, ErrorLabel::PassedValidation);
            assert_eq!(last.record.as_ref().and_then(|r| r.status_code), Some(200), "{}", tool.tool_id);
            assert_eq!(last.judgment, Some(JudgeClassification::Information), "{}", tool.tool_id);
        }
        let path = layout.refinements_dir().join(format!("{}.refine.json", tool.tool_id));
        let Ok(t) = read_json::<RefinementTranscript>(&path) else { continue };
        assert!(t.rounds.len() as u32 <= DEFAULT_MAX_ROUNDS, "{}", tool.tool_id);
        assert_eq!(t.final_label, outcome.final_label);
        if tool.revision > 0 {
            for (k, v) in tool.example_binding.iter().flatten() {
                assert!(kb.contains(&tool.source.source_id, k, v), "{}: {k}={v} not in the KB", tool.tool_id);
            }
        }
    }

    let status = tools.iter().find(|t| t.source.source_id == "status_api").expect("status tool");
    let t: RefinementTranscript = read_json(&layout.refinements_dir().join(format!("{}.refine.json", status.tool_id))).unwrap();
    assert_eq!(t.rounds.len() as u32, DEFAULT_MAX_ROUNDS);
    assert_eq!(t.final_label, ErrorLabel::AbnormalResponse);
}

/// With nothing in the KB, refinement falls back to guessed values and
/// still repairs the motif tool.
#[tokio::test]
async fn guesses_stand_in_for_an_empty_kb() {
    let bed = Testbed::start().await.unwrap();
    let out = tempfile::tempdir().unwrap();
    let layout = Layout::new(out.path());
    let gw = author_gateway(&bed.corpus);
    run_extract(&gw, &docs_dir(), &layout, 4).await.unwrap();
    run_compile(&gw, &layout, &MethodPolicy::default(), GenerationMode::Direct).await.unwrap();
    let tool = load_tools(&layout).unwrap().into_iter().find(|t| t.source.source_id == "glycan_motif").expect("motif tool");
    let doc = load_api_docs(&layout).unwrap().into_iter().find(|d| d.source_id == "glycan_motif");

    let validator = bed.validator();
    let initial = validator.validate_tool(&tool).await;
    assert_eq!(initial.final_label, ErrorLabel::NoParameterValue);

    let kb = ParamKb::new(gw.clone());
    let result = Refiner::new(gw, validator, DEFAULT_MAX_ROUNDS).refine_loop(&tool, &initial, doc.as_ref(), &kb.view()).await;
    assert!(result.outcome.verified, "{:#?}", result.transcript);
    let first = &result.transcript.rounds[0].ticket;
    assert!(first.candidates.iter().all(|c| c.candidates.is_empty()));
    assert!(first.candidates.iter().any(|c| !c.guesses.is_empty()));
    assert!(result.refine_calls <= DEFAULT_MAX_ROUNDS);
    assert!(!result.successes.is_empty());
}
