//! JSON API for the web console.
//!
//! Runs execute on blocking worker threads and are polled through
//! `GET /runs/{id}`. The store sits behind one lock: retrieval takes it
//! shared per call, decisions take it exclusively, and a distill job holds
//! it shared for its whole duration so no accept lands mid-report.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use flowsmith_core::agent::{decide, Agent, AgentConfig, AgentError, Decision, RunState, RunStatus};
use flowsmith_core::data_agent::import_schema;
use flowsmith_core::distill::{distill, write_outputs, DistillReport, REPORT_FILE};
use flowsmith_core::gateway::{Gateway, MetricsSnapshot};
use flowsmith_core::model::{
    ComplexityLevel, Query as UserQuery, QueryOrigin, QueryWorkflowRecord, RecordId, ScopeDescription, StepCategory,
};
use flowsmith_core::prompts::PromptSuite;
use flowsmith_core::store::{ExampleSource, IndexField, RetrievalIndex, StoreError, StoreHandle};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::journal::{RunJournal, JOURNAL_FILE};
use crate::{io_error, ServiceError};

pub const REPORTS_DIR: &str = "reports";

/// Store handle shared between request handlers and run workers.
#[derive(Clone)]
pub struct SharedStore(Arc<RwLock<StoreHandle>>);

impl SharedStore {
    pub fn new(store: StoreHandle) -> Self {
        Self(Arc::new(RwLock::new(store)))
    }

    pub fn read(&self) -> std::sync::RwLockReadGuard<'_, StoreHandle> {
        self.0.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn write(&self) -> std::sync::RwLockWriteGuard<'_, StoreHandle> {
        self.0.write().unwrap_or_else(|e| e.into_inner())
    }
}

impl ExampleSource for SharedStore {
    fn build_index(&self, field: IndexField) -> Result<RetrievalIndex, StoreError> {
        self.read().build_index(field)
    }

    fn fetch(&self, ids: &[RecordId]) -> Vec<QueryWorkflowRecord> {
        self.read().fetch(ids)
    }

    fn size(&self) -> usize {
        self.read().size()
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ReportJob {
    Running,
    Done { report: Box<DistillReport> },
    Failed { error: String },
}

struct Inner {
    config: ServiceConfig,
    gateway: Gateway,
    suite: PromptSuite,
    scope: ScopeDescription,
    store: SharedStore,
    runs: Mutex<HashMap<String, RunState>>,
    journal: RunJournal,
    decisions: tokio::sync::Mutex<()>,
    reports: Mutex<HashMap<String, ReportJob>>,
}

#[derive(Clone)]
pub struct Service(Arc<Inner>);

impl Service {
    /// Builds everything from the config, embedding any records that lack
    /// cached vectors.
    pub fn from_config(config: ServiceConfig) -> Result<Self, ServiceError> {
        let gateway = config.gateway()?;
        let suite = config.prompts()?;
        let scope = config.scope()?;
        Self::with_parts(config, gateway, suite, scope)
    }

    pub fn with_parts(
        config: ServiceConfig,
        gateway: Gateway,
        suite: PromptSuite,
        scope: ScopeDescription,
    ) -> Result<Self, ServiceError> {
        let mut store = config.open_store()?;
        let embedded = store.ensure_embeddings(&gateway)?;
        if embedded > 0 {
            tracing::info!(embedded, "filled missing embeddings");
        }
        let (journal, history) = RunJournal::open(&config.data_dir.join(JOURNAL_FILE))?;
        let runs = history.into_iter().map(|r| (r.run_id.clone(), r)).collect();
        Ok(Self(Arc::new(Inner {
            config,
            gateway,
            suite,
            scope,
            store: SharedStore::new(store),
            runs: Mutex::new(runs),
            journal,
            decisions: tokio::sync::Mutex::new(()),
            reports: Mutex::new(HashMap::new()),
        })))
    }

    pub fn store(&self) -> &SharedStore {
        &self.0.store
    }

    pub fn gateway(&self) -> &Gateway {
        &self.0.gateway
    }

    fn runs(&self) -> std::sync::MutexGuard<'_, HashMap<String, RunState>> {
        self.0.runs.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn reports(&self) -> std::sync::MutexGuard<'_, HashMap<String, ReportJob>> {
        self.0.reports.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn agent_config(&self) -> AgentConfig {
        self.0.config.agent
    }

    /// Publishes `state`, journaling it when the status changed.
    fn publish(&self, state: &RunState) {
        let previous = self.runs().insert(state.run_id.clone(), state.clone()).map(|p| p.status);
        if previous != Some(state.status) {
            self.0.journal.record(state);
        }
    }

    fn execute(&self, state: RunState) {
        let inner = &self.0;
        let agent = Agent::new(&inner.gateway, &inner.suite, &inner.scope, self.agent_config());
        agent.run_observed(state, &inner.store, &mut |s| self.publish(s));
    }

    fn report_path(&self, id: &str) -> PathBuf {
        self.0.config.data_dir.join(REPORTS_DIR).join(format!("{id}.json"))
    }

    fn run_distill(&self, incremental: bool) -> Result<DistillReport, ServiceError> {
        let config = &self.0.config;
        let schema = config.data_agent.schema.as_ref().map(import_schema).transpose()?;
        let existing = if incremental { latest_report(config)?.map(|r| r.functions).unwrap_or_default() } else { Vec::new() };
        let store = self.0.store.read();
        let report = distill(
            store.records(),
            &self.0.suite,
            &self.0.gateway,
            &config.distill,
            &existing,
            schema.as_ref(),
        )?;
        drop(store);
        write_outputs(&report, &config.data_dir)?;
        Ok(report)
    }
}

/// The report written by the most recent successful distill, if any.
pub fn latest_report(config: &ServiceConfig) -> Result<Option<DistillReport>, ServiceError> {
    let path = config.data_dir.join(REPORT_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(io_error(&path))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| ServiceError::Input(format!("{}: {e}", path.display())))
}

pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self(StatusCode::BAD_REQUEST, msg.into())
    }

    fn not_found(what: &str, id: impl std::fmt::Display) -> Self {
        Self(StatusCode::NOT_FOUND, format!("no {what} with id {id}"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid payload: {e}")))
}

fn parse_level(raw: &str) -> Result<ComplexityLevel, ApiError> {
    raw.parse().map_err(|e: flowsmith_core::model::ModelError| ApiError::bad_request(e.to_string()))
}

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/runs", post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/decision", post(post_decision))
        .route("/examples", get(list_examples))
        .route("/examples/{id}", get(get_example))
        .route("/distill", post(start_distill))
        .route("/reports/{id}", get(get_report))
        .route("/stats", get(stats))
        .with_state(service)
}

#[derive(Deserialize)]
struct NewRun {
    query_text: String,
    level: Option<String>,
}

#[derive(Serialize)]
struct RunCreated {
    run_id: String,
}

async fn create_run(State(svc): State<Service>, body: Bytes) -> Result<(StatusCode, Json<RunCreated>), ApiError> {
    let req: NewRun = parse_body(&body)?;
    let level = match req.level.as_deref() {
        Some(l) => parse_level(l)?,
        None => ComplexityLevel::ComplexSingleGoal,
    };
    let query = UserQuery::user(req.query_text, level).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let state = RunState::new(query);
    let run_id = state.run_id.clone();
    svc.publish(&state);
    let worker = svc.clone();
    tokio::task::spawn_blocking(move || worker.execute(state));
    Ok((StatusCode::ACCEPTED, Json(RunCreated { run_id })))
}

async fn get_run(State(svc): State<Service>, Path(id): Path<String>) -> Result<Json<RunState>, ApiError> {
    svc.runs().get(&id).cloned().map(Json).ok_or_else(|| ApiError::not_found("run", &id))
}

async fn post_decision(
    State(svc): State<Service>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<RunState>, ApiError> {
    let decision: Decision = parse_body(&body)?;
    let _serial = svc.0.decisions.lock().await;
    let mut run = svc.runs().get(&id).cloned().ok_or_else(|| ApiError::not_found("run", &id))?;
    if run.status != RunStatus::AwaitingDecision {
        return Err(ApiError(
            StatusCode::CONFLICT,
            format!("run {id} is {:?}, not awaiting a decision", run.status),
        ));
    }
    let worker = svc.clone();
    let (run, outcome) = tokio::task::spawn_blocking(move || {
        let mut store = worker.0.store.write();
        let outcome = decide(&mut run, decision, &mut store);
        if let Ok(Some(_)) = outcome {
            if let Err(e) = store.ensure_embeddings(&worker.0.gateway) {
                tracing::error!(error = %e, "accepted record stored without step embeddings");
            }
        }
        (run, outcome)
    })
    .await
    .map_err(ApiError::internal)?;
    match outcome {
        Ok(_) => {
            svc.publish(&run);
            Ok(Json(run))
        }
        Err(e @ AgentError::InvalidWorkflow(_)) => Err(ApiError::bad_request(e.to_string())),
        Err(e @ AgentError::Store(StoreError::ValidationFailed(_) | StoreError::DuplicateQueryId(_))) => {
            Err(ApiError(StatusCode::CONFLICT, e.to_string()))
        }
        Err(e @ AgentError::InvalidState(_)) => Err(ApiError(StatusCode::CONFLICT, e.to_string())),
        Err(e) => Err(ApiError::internal(e)),
    }
}

#[derive(Deserialize)]
struct ExampleFilter {
    level: Option<String>,
    q: Option<String>,
}

#[derive(Serialize)]
pub struct ExampleSummary {
    pub id: RecordId,
    pub query_id: String,
    pub text: String,
    pub level: ComplexityLevel,
    pub origin: QueryOrigin,
    pub steps: usize,
    pub created_at: DateTime<Utc>,
}

impl From<&QueryWorkflowRecord> for ExampleSummary {
    fn from(r: &QueryWorkflowRecord) -> Self {
        Self {
            id: r.id,
            query_id: r.query.id.clone(),
            text: r.query.text.clone(),
            level: r.query.level,
            origin: r.query.origin,
            steps: r.workflow.steps.len(),
            created_at: r.created_at,
        }
    }
}

async fn list_examples(
    State(svc): State<Service>,
    Query(filter): Query<ExampleFilter>,
) -> Result<Json<Vec<ExampleSummary>>, ApiError> {
    let level = filter.level.as_deref().filter(|l| !l.is_empty()).map(parse_level).transpose()?;
    let text = filter.q.as_deref().filter(|q| !q.is_empty());
    let store = svc.store().read();
    Ok(Json(store.search(level, text).into_iter().map(ExampleSummary::from).collect()))
}

async fn get_example(
    State(svc): State<Service>,
    Path(id): Path<String>,
) -> Result<Json<QueryWorkflowRecord>, ApiError> {
    let id: u64 = id.parse().map_err(|_| ApiError::bad_request(format!("record id {id:?} is not a number")))?;
    let mut record = svc
        .store()
        .read()
        .get(RecordId(id))
        .cloned()
        .ok_or_else(|| ApiError::not_found("record", id))?;
    record.embeddings = None;
    Ok(Json(record))
}

#[derive(Deserialize, Default)]
struct DistillRequest {
    #[serde(default)]
    incremental: bool,
}

#[derive(Serialize)]
struct ReportCreated {
    report_id: String,
}

async fn start_distill(State(svc): State<Service>, body: Bytes) -> Result<(StatusCode, Json<ReportCreated>), ApiError> {
    let req: DistillRequest = if body.is_empty() { DistillRequest::default() } else { parse_body(&body)? };
    let report_id = {
        let mut reports = svc.reports();
        if reports.values().any(|j| matches!(j, ReportJob::Running)) {
            return Err(ApiError(StatusCode::CONFLICT, "a distill job is already running".into()));
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        reports.insert(id.clone(), ReportJob::Running);
        id
    };
    let worker = svc.clone();
    let id = report_id.clone();
    tokio::task::spawn_blocking(move || {
        let job = match worker.run_distill(req.incremental) {
            Ok(report) => {
                let path = worker.report_path(&id);
                let saved = std::fs::create_dir_all(path.parent().unwrap())
                    .and_then(|_| std::fs::write(&path, report.to_json()));
                if let Err(e) = saved {
                    tracing::error!(path = %path.display(), error = %e, "cannot save report");
                }
                ReportJob::Done { report: Box::new(report) }
            }
            Err(e) => ReportJob::Failed { error: e.to_string() },
        };
        worker.reports().insert(id, job);
    });
    Ok((StatusCode::ACCEPTED, Json(ReportCreated { report_id })))
}

async fn get_report(State(svc): State<Service>, Path(id): Path<String>) -> Result<Json<ReportJob>, ApiError> {
    if let Some(job) = svc.reports().get(&id).cloned() {
        return Ok(Json(job));
    }
    if !id.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(ApiError::not_found("report", &id));
    }
    let path = svc.report_path(&id);
    let text = std::fs::read_to_string(&path).map_err(|_| ApiError::not_found("report", &id))?;
    let report: DistillReport = serde_json::from_str(&text).map_err(ApiError::internal)?;
    Ok(Json(ReportJob::Done { report: Box::new(report) }))
}

#[derive(Serialize)]
pub struct Stats {
    pub store_size: usize,
    pub rejected: usize,
    pub levels: BTreeMap<ComplexityLevel, usize>,
    pub runs: BTreeMap<String, usize>,
    /// Step categories summed over the slices of the latest report.
    pub category_counts: BTreeMap<StepCategory, usize>,
    pub histogram: BTreeMap<StepCategory, Vec<flowsmith_core::distill::HistogramBar>>,
    pub gateway: MetricsSnapshot,
}

pub fn collect_stats(store: &StoreHandle, report: Option<&DistillReport>) -> Result<Stats, ServiceError> {
    let mut levels: BTreeMap<ComplexityLevel, usize> = ComplexityLevel::ALL.iter().map(|l| (*l, 0)).collect();
    for r in store.records() {
        *levels.entry(r.query.level).or_default() += 1;
    }
    let mut category_counts = BTreeMap::new();
    let mut histogram = BTreeMap::new();
    if let Some(report) = report {
        for slice in &report.slices {
            for (c, n) in &slice.category_counts {
                *category_counts.entry(*c).or_default() += n;
            }
        }
        for c in [StepCategory::Analysis, StepCategory::Output] {
            histogram.insert(c, report.histogram(c));
        }
    }
    Ok(Stats {
        store_size: store.len(),
        rejected: store.rejected_count()?,
        levels,
        runs: BTreeMap::new(),
        category_counts,
        histogram,
        gateway: MetricsSnapshot::default(),
    })
}

async fn stats(State(svc): State<Service>) -> Result<Json<Stats>, ApiError> {
    let report = latest_report(&svc.0.config).map_err(ApiError::internal)?;
    let mut stats = collect_stats(&svc.store().read(), report.as_ref()).map_err(ApiError::internal)?;
    for run in svc.runs().values() {
        *stats.runs.entry(format!("{:?}", run.status)).or_default() += 1;
    }
    stats.gateway = svc.gateway().metrics();
    Ok(Json(stats))
}

/// Binds the configured address and serves until the process stops.
pub fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let listen = config.listen.clone();
    let service = Service::from_config(config)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ServiceError::Config(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| ServiceError::Config(format!("cannot listen on {listen}: {e}")))?;
        tracing::info!(%listen, "serving");
        axum::serve(listener, router(service))
            .await
            .map_err(|e| ServiceError::Config(format!("server stopped: {e}")))
    })
}
