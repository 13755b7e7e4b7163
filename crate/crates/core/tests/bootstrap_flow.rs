use std::sync::{Arc, Mutex};

use flowsmith_core::bootstrap::{
    accrete_icl, bootstrap, generate_queries, seed_database, BootstrapError, BootstrapPlan,
};
use flowsmith_core::gateway::{ChatRequest, Gateway, GatewayConfig, ModelRole, ScriptRule, ScriptedBackend};
use flowsmith_core::model::{parse_workflow, ComplexityLevel, Query};
use flowsmith_core::prompts::{transcript, PromptSuite};
use flowsmith_core::store::{StoreHandle, STORE_FILE};
use flowsmith_core::testkit::{golden_scope, synthetic_workflow, target_query, world_backend};

const DIM: usize = 32;

fn gateway(backend: ScriptedBackend) -> Gateway {
    Gateway::scripted_with(
        backend,
        GatewayConfig {
            embedding_dim: DIM,
            ..Default::default()
        },
    )
}

fn recording_backend(log: Arc<Mutex<Vec<ChatRequest>>>) -> ScriptedBackend {
    let mut backend = ScriptedBackend::new();
    backend.push_responder(
        Some(ModelRole::Reasoner),
        Box::new(move |req| {
            log.lock().unwrap().push(req.clone());
            target_query(req).map(synthetic_workflow)
        }),
    );
    backend
}

fn queries(per_level: usize) -> Vec<Query> {
    let g = gateway(world_backend());
    generate_queries(&PromptSuite::builtin(), &g, &golden_scope(), &[], per_level).unwrap()
}

fn example_count(req: &ChatRequest) -> usize {
    req.last_user_text().matches("### Example ").count()
}

#[test]
fn query_generation_yields_per_level_counts() {
    assert_eq!(queries(20).len(), 80);
    assert_eq!(queries(10).len(), 40);

    let mut backend = ScriptedBackend::new();
    backend.push_rule(ScriptRule::for_role(
        ModelRole::Generator,
        r#"{"simple": ["a"], "moderate": ["b"], "complex_single_goal": ["c"]}"#,
    ));
    let g = gateway(backend);
    assert!(matches!(
        generate_queries(&PromptSuite::builtin(), &g, &golden_scope(), &[], 1),
        Err(BootstrapError::Parse(_))
    ));
}

#[test]
fn accretion_grows_the_icl_set_one_example_per_call() {
    let log: Arc<Mutex<Vec<ChatRequest>>> = Arc::default();
    let g = gateway(recording_backend(log.clone()));
    let suite = PromptSuite::builtin();
    let seeds = BootstrapPlan::default().select_seeds(&queries(20)).unwrap();
    let icl = accrete_icl(&suite, &g, &golden_scope(), &seeds).unwrap();

    assert_eq!(icl.len(), 4);
    let calls = log.lock().unwrap();
    assert_eq!(calls.iter().map(example_count).collect::<Vec<_>>(), [0, 1, 2, 3]);
    for (i, record) in icl.iter().enumerate() {
        assert_eq!(record.query, seeds[i]);
        let (thought, wf) = parse_workflow(&synthetic_workflow(&seeds[i].text)).unwrap();
        assert_eq!((record.thought.clone(), record.workflow.clone()), (thought, wf));
    }
    let last: Vec<&str> = calls[3].last_user_text().lines().filter_map(|l| l.strip_prefix("Query: ")).collect();
    let earlier: Vec<&str> = seeds[..3].iter().map(|q| q.text.as_str()).collect();
    assert_eq!(last, earlier);
}

#[test]
fn accretion_is_reproducible() {
    let run = || {
        let log: Arc<Mutex<Vec<ChatRequest>>> = Arc::default();
        let g = gateway(recording_backend(log.clone()));
        let seeds = BootstrapPlan::default().select_seeds(&queries(20)).unwrap();
        accrete_icl(&PromptSuite::builtin(), &g, &golden_scope(), &seeds).unwrap();
        let prompts: Vec<String> = log.lock().unwrap().iter().map(transcript).collect();
        prompts
    };
    assert_eq!(run(), run());
}

#[test]
fn accretion_failure_reports_partial_state() {
    let mut backend = ScriptedBackend::new();
    backend.push_rule(ScriptRule {
        role: Some(ModelRole::Reasoner),
        contains: None,
        responses: vec![synthetic_workflow("x"), synthetic_workflow("y"), "garbage".into()],
    });
    let g = gateway(backend);
    let seeds = BootstrapPlan::default().select_seeds(&queries(20)).unwrap();
    match accrete_icl(&PromptSuite::builtin(), &g, &golden_scope(), &seeds) {
        Err(BootstrapError::Accretion { completed, .. }) => assert_eq!(completed.len(), 2),
        other => panic!("expected accretion failure, got {other:?}"),
    }
}

#[test]
fn bootstrap_builds_forty_records() {
    let g = gateway(world_backend());
    let dir = tempfile::tempdir().unwrap();
    let mut store = StoreHandle::load(dir.path().join(STORE_FILE), DIM).unwrap();
    let qs = queries(20);
    let report = bootstrap(&BootstrapPlan::default(), &PromptSuite::builtin(), &g, &golden_scope(), &qs, &mut store).unwrap();

    assert_eq!(store.len(), 40);
    assert_eq!(report.seeded.count(), 40);
    assert!(report.seeded.failures.is_empty());
    assert_eq!(store.search(Some(ComplexityLevel::Simple), None).len(), 20);
    assert_eq!(store.search(Some(ComplexityLevel::Moderate), None).len(), 20);
    assert!(store.dirty().is_empty());
    // Four accretion calls plus 36 fresh generations; accreted queries are reused.
    assert_eq!(g.metrics().calls(ModelRole::Reasoner), 40);
    let stored_first = &store.records()[0];
    assert_eq!(stored_first.query.id, report.icl_queries[0]);

    assert!(matches!(
        bootstrap(&BootstrapPlan::default(), &PromptSuite::builtin(), &g, &golden_scope(), &qs, &mut store),
        Err(BootstrapError::StoreNotEmpty(40))
    ));
}

#[test]
fn seeding_collects_failures_and_never_retrieves() {
    let qs = queries(20);
    let batch: Vec<Query> = qs.iter().filter(|q| q.level <= ComplexityLevel::Moderate).cloned().collect();
    let poisoned = batch[17].text.clone();
    let mut backend = ScriptedBackend::new();
    backend.push_responder(
        Some(ModelRole::Reasoner),
        Box::new(move |req| {
            let q = target_query(req)?;
            Some(if q == poisoned { "not a workflow".into() } else { synthetic_workflow(q) })
        }),
    );
    let g = gateway(backend);
    let suite = PromptSuite::builtin();
    let seeds = BootstrapPlan::default().select_seeds(&qs).unwrap();
    let icl = accrete_icl(&suite, &g, &golden_scope(), &seeds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut store = StoreHandle::load(dir.path().join(STORE_FILE), DIM).unwrap();
    let report = seed_database(&suite, &g, &golden_scope(), &batch, &icl, &mut store);
    assert_eq!(report.count(), 39);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].query_id, batch[17].id);
    assert_eq!(store.len(), 39);
    assert_eq!(g.metrics().embed_calls, 0);

    let empty = seed_database(&suite, &g, &golden_scope(), &[], &icl, &mut store);
    assert_eq!(empty.count(), 0);
    assert_eq!(store.len(), 39);
}
