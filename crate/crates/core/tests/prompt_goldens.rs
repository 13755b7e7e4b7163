use std::path::PathBuf;

use flowsmith_core::prompts::{transcript, PromptFamily, PromptSuite};
use flowsmith_core::testkit::golden_requests;

fn golden_path(family: PromptFamily) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{}.txt", family.key()))
}

#[test]
fn every_family_matches_its_golden_file() {
    let rendered = golden_requests(&PromptSuite::builtin());
    assert_eq!(rendered.len(), PromptFamily::ALL.len());
    let update = std::env::var_os("UPDATE_GOLDENS").is_some();
    for (family, request) in rendered {
        let text = transcript(&request);
        let path = golden_path(family);
        if update {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        let golden = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(text, golden, "{family} prompt drifted from {}", path.display());
    }
}

#[test]
fn rendering_is_pure() {
    let suite = PromptSuite::builtin();
    let a: Vec<_> = golden_requests(&suite).into_iter().map(|(_, r)| transcript(&r)).collect();
    let b: Vec<_> = golden_requests(&suite).into_iter().map(|(_, r)| transcript(&r)).collect();
    assert_eq!(a, b);
}

#[test]
fn goldens_carry_the_expected_structure() {
    let suite = PromptSuite::builtin();
    let all: std::collections::BTreeMap<_, _> = golden_requests(&suite).into_iter().collect();
    let terms = all[&PromptFamily::TermExtract].last_user_text();
    let order: Vec<_> = ["\"overall_action\"", "\"action\"", "\"object\"", "\"attributes\""]
        .iter()
        .map(|s| terms.find(s).unwrap())
        .collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]));
    assert!(terms.contains("Analyze the wafer map to detect spatial failure patterns"));

    let classify = all[&PromptFamily::Classify].last_user_text();
    assert!(classify.contains("Answer with exactly one of: Analysis, Output, Data."));

    let workflow = all[&PromptFamily::WorkflowGen].last_user_text();
    assert!(workflow.find("### Example 1").unwrap() < workflow.find("### Example 2").unwrap());
    assert!(workflow.trim_end().ends_with("over multiple weeks?"));

    let data = all[&PromptFamily::DataAgent].last_user_text();
    assert!(data.contains("- high_yield_threshold = 0.9"));
    assert!(data.contains("(:Lot)-[:HAS_WAFER]->(:Wafer)"));
}
