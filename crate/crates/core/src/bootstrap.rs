//! Building the initial corpus: leveled query generation, incremental ICL
//! accretion, and the fixed-ICL seed batch.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::model::{
    json_payload, parse_workflow, ComplexityLevel, ModelError, Query, QueryWorkflowRecord, RecordId,
    ScopeDescription,
};
use crate::prompts::{PromptError, PromptSuite};
use crate::store::{StoreError, StoreHandle};

#[derive(Debug, thiserror::Error)]
pub enum BootstrapError {
    #[error("cannot parse generated queries: {0}")]
    Parse(String),
    #[error("plan needs {want} {level} seed queries, only {got} available")]
    NotEnoughSeeds {
        level: ComplexityLevel,
        want: usize,
        got: usize,
    },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("accretion stopped after {} examples: {cause}", .completed.len())]
    Accretion {
        completed: Vec<QueryWorkflowRecord>,
        cause: String,
    },
    #[error("bootstrap needs an empty store, found {0} records")]
    StoreNotEmpty(usize),
    #[error("review file {path}: {reason}")]
    Review { path: String, reason: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapPlan {
    pub per_level: usize,
    /// Levels and counts of the accreted ICL examples, in accretion order.
    pub seed_icl: Vec<(ComplexityLevel, usize)>,
    /// Levels seeded with the accreted prompt.
    pub batch_levels: Vec<ComplexityLevel>,
}

impl Default for BootstrapPlan {
    fn default() -> Self {
        Self {
            per_level: 20,
            seed_icl: vec![(ComplexityLevel::Simple, 2), (ComplexityLevel::Moderate, 2)],
            batch_levels: vec![ComplexityLevel::Simple, ComplexityLevel::Moderate],
        }
    }
}

impl BootstrapPlan {
    pub fn icl_size(&self) -> usize {
        self.seed_icl.iter().map(|(_, n)| n).sum()
    }

    /// The accretion queries: the first `n` queries of each planned level.
    pub fn select_seeds(&self, queries: &[Query]) -> Result<Vec<Query>, BootstrapError> {
        let mut seeds = Vec::new();
        for &(level, want) in &self.seed_icl {
            let found: Vec<_> = queries.iter().filter(|q| q.level == level).take(want).cloned().collect();
            if found.len() < want {
                return Err(BootstrapError::NotEnoughSeeds {
                    level,
                    want,
                    got: found.len(),
                });
            }
            seeds.extend(found);
        }
        Ok(seeds)
    }
}

/// Asks the generator for `per_level` queries at every level.
pub fn generate_queries(
    suite: &PromptSuite,
    gateway: &Gateway,
    scope: &ScopeDescription,
    icl: &[Query],
    per_level: usize,
) -> Result<Vec<Query>, BootstrapError> {
    let request = suite.query_gen(scope, icl, per_level)?;
    let raw = gateway.chat(&request)?;
    parse_queries(&raw, per_level)
}

/// Parses a level-keyed JSON object. Every level must supply at least
/// `per_level` distinct queries; extras are dropped.
pub fn parse_queries(raw: &str, per_level: usize) -> Result<Vec<Query>, BootstrapError> {
    let parsed: BTreeMap<String, Vec<String>> =
        serde_json::from_str(json_payload(raw)).map_err(|e| BootstrapError::Parse(e.to_string()))?;
    let mut out = Vec::with_capacity(per_level * ComplexityLevel::ALL.len());
    for level in ComplexityLevel::ALL {
        let texts = parsed
            .get(level.key())
            .ok_or_else(|| BootstrapError::Parse(format!("response has no {:?} list", level.key())))?;
        let mut seen = HashSet::new();
        let distinct: Vec<&str> = texts
            .iter()
            .map(|t| t.trim())
            .filter(|t| !t.is_empty() && seen.insert(t.to_string()))
            .take(per_level)
            .collect();
        if distinct.len() < per_level {
            return Err(BootstrapError::Parse(format!(
                "{} has {} distinct queries, expected {per_level}",
                level.key(),
                distinct.len()
            )));
        }
        for text in distinct {
            out.push(Query::generated(text, level).map_err(|e: ModelError| BootstrapError::Parse(e.to_string()))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEntry {
    #[serde(flatten)]
    pub query: Query,
    /// Operators set this to false to strike a query.
    pub accepted: bool,
}

/// Writes queries to the review file, all initially accepted.
pub fn write_review(path: &Path, queries: &[Query]) -> Result<(), BootstrapError> {
    let review_err = |e: std::io::Error| BootstrapError::Review {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(review_err)?;
    }
    let mut file = fs::File::create(path).map_err(review_err)?;
    for q in queries {
        let entry = ReviewEntry {
            query: q.clone(),
            accepted: true,
        };
        writeln!(file, "{}", serde_json::to_string(&entry).expect("entries serialize")).map_err(review_err)?;
    }
    file.sync_all().map_err(review_err)
}

/// Reads the review file, returning only accepted queries in file order.
pub fn read_review(path: &Path) -> Result<Vec<Query>, BootstrapError> {
    let raw = fs::read_to_string(path).map_err(|e| BootstrapError::Review {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let entry: ReviewEntry = serde_json::from_str(line).map_err(|e| BootstrapError::Review {
            path: path.display().to_string(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        if entry.accepted {
            out.push(entry.query);
        }
    }
    Ok(out)
}

/// Runs the workflow prompt on each seed query in turn, adding every response
/// verbatim as the next ICL example. Call `i` carries `i - 1` examples.
pub fn accrete_icl(
    suite: &PromptSuite,
    gateway: &Gateway,
    scope: &ScopeDescription,
    seeds: &[Query],
) -> Result<Vec<QueryWorkflowRecord>, BootstrapError> {
    if seeds.len() > suite.limits.max_icl {
        return Err(BootstrapError::InvalidPlan(format!(
            "{} seed queries exceed the ICL capacity of {}",
            seeds.len(),
            suite.limits.max_icl
        )));
    }
    let mut icl: Vec<QueryWorkflowRecord> = Vec::with_capacity(seeds.len());
    for query in seeds {
        match generate_one(suite, gateway, scope, &icl, query) {
            Ok(record) => icl.push(record),
            Err(cause) => {
                return Err(BootstrapError::Accretion {
                    completed: icl,
                    cause,
                })
            }
        }
    }
    Ok(icl)
}

fn generate_one(
    suite: &PromptSuite,
    gateway: &Gateway,
    scope: &ScopeDescription,
    icl: &[QueryWorkflowRecord],
    query: &Query,
) -> Result<QueryWorkflowRecord, String> {
    let request = suite.workflow(scope, icl, query, true).map_err(|e| e.to_string())?;
    let raw = gateway.chat(&request).map_err(|e| e.to_string())?;
    let (thought, workflow) = parse_workflow(&raw).map_err(|e| e.to_string())?;
    Ok(QueryWorkflowRecord::new(query.clone(), thought, workflow))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub query_id: String,
    pub cause: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub stored: Vec<RecordId>,
    pub failures: Vec<SeedFailure>,
}

impl SeedReport {
    pub fn count(&self) -> usize {
        self.stored.len()
    }
}

/// One pass of the fixed-ICL workflow prompt over `queries`. Queries that were
/// accreted reuse their accretion-time record. No retrieval happens here.
pub fn seed_database(
    suite: &PromptSuite,
    gateway: &Gateway,
    scope: &ScopeDescription,
    queries: &[Query],
    icl: &[QueryWorkflowRecord],
    store: &mut StoreHandle,
) -> SeedReport {
    let mut report = SeedReport::default();
    for query in queries {
        let record = match icl.iter().find(|r| r.query.id == query.id) {
            Some(r) => Ok(r.clone()),
            None => generate_one(suite, gateway, scope, icl, query),
        };
        match record.and_then(|r| store.append(r).map_err(|e| e.to_string())) {
            Ok(id) => report.stored.push(id),
            Err(cause) => {
                tracing::warn!(query = %query.id, %cause, "seed query failed");
                report.failures.push(SeedFailure {
                    query_id: query.id.clone(),
                    cause,
                })
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub icl_queries: Vec<String>,
    pub seeded: SeedReport,
    pub embedded_texts: usize,
}

/// Accretion followed by the seed batch, then embedding of the new store.
pub fn bootstrap(
    plan: &BootstrapPlan,
    suite: &PromptSuite,
    gateway: &Gateway,
    scope: &ScopeDescription,
    queries: &[Query],
    store: &mut StoreHandle,
) -> Result<BootstrapReport, BootstrapError> {
    if !store.is_empty() {
        return Err(BootstrapError::StoreNotEmpty(store.len()));
    }
    let seeds = plan.select_seeds(queries)?;
    let icl = accrete_icl(suite, gateway, scope, &seeds)?;
    let batch: Vec<Query> = queries
        .iter()
        .filter(|q| plan.batch_levels.contains(&q.level))
        .cloned()
        .collect();
    let seeded = seed_database(suite, gateway, scope, &batch, &icl, store);
    let embedded_texts = store.ensure_embeddings(gateway)?;
    Ok(BootstrapReport {
        icl_queries: icl.iter().map(|r| r.query.id.clone()).collect(),
        seeded,
        embedded_texts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lists(per: &[(&str, usize)]) -> String {
        let obj: serde_json::Map<String, serde_json::Value> = per
            .iter()
            .map(|(k, n)| (k.to_string(), (0..*n).map(|i| format!("{k} query {i}")).collect()))
            .collect();
        serde_json::Value::Object(obj).to_string()
    }

    const ALL20: &[(&str, usize)] = &[("simple", 20), ("moderate", 20), ("complex_single_goal", 20), ("multi_goal", 20)];

    #[test]
    fn parses_per_level_lists() {
        let qs = parse_queries(&lists(ALL20), 20).unwrap();
        assert_eq!(qs.len(), 80);
        for level in ComplexityLevel::ALL {
            assert_eq!(qs.iter().filter(|q| q.level == level).count(), 20);
        }
        let qs = parse_queries(&format!("```json\n{}\n```", lists(ALL20)), 10).unwrap();
        assert_eq!(qs.len(), 40);
    }

    #[test]
    fn missing_or_short_levels_are_parse_errors() {
        let missing = lists(&[("simple", 20), ("moderate", 20), ("complex_single_goal", 20)]);
        assert!(matches!(parse_queries(&missing, 20), Err(BootstrapError::Parse(m)) if m.contains("multi_goal")));
        let short = lists(&[("simple", 20), ("moderate", 19), ("complex_single_goal", 20), ("multi_goal", 20)]);
        assert!(matches!(parse_queries(&short, 20), Err(BootstrapError::Parse(_))));
    }

    #[test]
    fn review_file_round_trips_and_honors_strikes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queries.jsonl");
        let qs = parse_queries(&lists(ALL20), 2).unwrap();
        write_review(&path, &qs).unwrap();
        assert_eq!(read_review(&path).unwrap(), qs);
        let raw = fs::read_to_string(&path).unwrap().replacen("\"accepted\":true", "\"accepted\":false", 1);
        fs::write(&path, raw).unwrap();
        assert_eq!(read_review(&path).unwrap(), qs[1..]);
    }

    #[test]
    fn seeds_follow_plan_order() {
        let qs = parse_queries(&lists(ALL20), 3).unwrap();
        let seeds = BootstrapPlan::default().select_seeds(&qs).unwrap();
        let levels: Vec<_> = seeds.iter().map(|q| q.level).collect();
        use ComplexityLevel::*;
        assert_eq!(levels, [Simple, Simple, Moderate, Moderate]);
        assert_eq!(seeds[0], qs[0]);
        assert_eq!(BootstrapPlan::default().icl_size(), 4);
    }
}
