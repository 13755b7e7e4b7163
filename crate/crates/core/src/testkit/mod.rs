//! Deterministic fixtures shared by integration and acceptance tests.

mod distill;
mod prompts;

pub use distill::{
    apportion, distill_backend, distill_corpus, fixture_config, group_quotas, SliceShape, ANALYSIS_ACTIONS, DATA_ACTIONS,
    OUTPUT_ACTIONS, SLICES,
};

pub use prompts::{golden_icl, golden_requests, golden_scope, GOLDEN_SCHEMA, GOLDEN_SCOPE};

use chrono::{TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use regex::Regex;

use crate::gateway::{ChatRequest, ModelRole, ScriptedBackend};
use crate::prompts::TARGET_MARKER;
use crate::model::{
    render_workflow, text_digest, CachedEmbedding, ComplexityLevel, EmbeddingVector, Query, QueryOrigin, QueryWorkflowRecord, RecordEmbeddings,
    RecordId, Thought, Workflow,
};

const WORDS: &[&str] = &[
    "wafer", "lot", "yield", "die", "bin", "test", "map", "trend", "outlier", "cluster", "spatial", "pattern",
    "parametric", "limit", "probe", "site", "week", "histogram", "correlate", "tester", "ñ", "°C", "\"quoted\"",
    "back\\slash", "tab\there", "δ", "µA",
];

pub fn random_text<R: Rng>(rng: &mut R, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn random_vector<R: Rng>(rng: &mut R, dim: usize) -> EmbeddingVector {
    EmbeddingVector::new((0..dim).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

/// A valid record with random texts, step count, timestamp, and (sometimes)
/// full embedding caches of dimension `dim`.
pub fn random_record<R: Rng>(rng: &mut R, serial: usize, dim: usize) -> QueryWorkflowRecord {
    let level = *ComplexityLevel::ALL.choose(rng).unwrap();
    let origin = if rng.random_bool(0.5) { QueryOrigin::Generated } else { QueryOrigin::UserSubmitted };
    let query = Query::new(format!("q-{serial:05}"), random_text(rng, 3, 20), level, origin).unwrap();
    let thought = if rng.random_bool(0.1) { Thought::default() } else { Thought::new(random_text(rng, 5, 40)) };
    let steps = rng.random_range(1..=9);
    let workflow = Workflow::from_pairs((0..steps).map(|_| {
        let detail = if rng.random_bool(0.1) { String::new() } else { random_text(rng, 4, 30) };
        (random_text(rng, 1, 5), detail)
    }))
    .unwrap();
    let mut record = QueryWorkflowRecord::new(query, thought, workflow);
    record.id = RecordId(0);
    let secs = rng.random_range(1_600_000_000..1_900_000_000);
    let nanos = if rng.random_bool(0.3) { 0 } else { rng.random_range(0..1_000_000_000) };
    record.created_at = Utc.timestamp_opt(secs, nanos).unwrap();
    if rng.random_bool(0.5) {
        let steps = record
            .workflow
            .steps
            .iter()
            .map(|s| CachedEmbedding::for_text(&s.embedding_text(), random_vector(rng, dim)))
            .collect();
        record.embeddings = Some(RecordEmbeddings {
            query: Some(CachedEmbedding::for_text(&record.query.text, random_vector(rng, dim))),
            thought: (!record.thought.is_empty())
                .then(|| CachedEmbedding::for_text(record.thought.as_str(), random_vector(rng, dim))),
            steps: Some(steps),
        });
    }
    record
}

/// The query a workflow prompt asks about.
pub fn target_query(request: &ChatRequest) -> Option<&str> {
    let text = request.last_user_text();
    let at = text.find(TARGET_MARKER)? + TARGET_MARKER.len();
    Some(text[at..].trim())
}

/// A well-formed reasoner reply whose content is derived from the query.
pub fn synthetic_workflow(query: &str) -> String {
    let steps = 2 + text_digest(query).bytes().last().unwrap() as usize % 4;
    let wf = Workflow::from_pairs((1..=steps).map(|i| {
        (
            format!("Step {i} for {query}"),
            format!("Carry out part {i} of answering: {query}"),
        )
    }))
    .unwrap();
    render_workflow(&Thought::new(format!("Thinking about: {query}")), &wf)
}

/// A query-generation reply with `per_level` queries per level, tagged so
/// different batches do not collide.
pub fn query_lists(per_level: usize, tag: &str) -> String {
    let obj: serde_json::Map<String, serde_json::Value> = ComplexityLevel::ALL
        .iter()
        .map(|l| {
            let list = (1..=per_level).map(|i| format!("{tag} {} query number {i}", l.key())).collect();
            (l.key().to_string(), list)
        })
        .collect();
    serde_json::Value::Object(obj).to_string()
}

/// Answers query generation by reading the requested count from the prompt,
/// and every workflow prompt with [`synthetic_workflow`].
pub fn world_backend() -> ScriptedBackend {
    let count = Regex::new(r"Write (\d+) distinct queries").unwrap();
    let mut backend = ScriptedBackend::new();
    backend.push_responder(
        Some(ModelRole::Generator),
        Box::new(move |req| {
            let n: usize = count.captures(req.last_user_text())?[1].parse().ok()?;
            Some(query_lists(n, "generated"))
        }),
    );
    backend.push_responder(
        Some(ModelRole::Reasoner),
        Box::new(|req| target_query(req).map(synthetic_workflow)),
    );
    backend
}
