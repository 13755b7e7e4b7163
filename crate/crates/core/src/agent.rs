//! The iterative retrieve-and-reason loop.
//!
//! A run walks a small node graph: `Retrieve` picks ICL examples (by query
//! embedding on the first pass, by the previous thought afterwards),
//! `Reason` asks the reasoner model for a thought and workflow, and
//! `Converge` compares consecutive thoughts. The loop parks in
//! `AwaitingDecision` until an operator accepts or rejects the result; only
//! an accept writes to the store.

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::model::{
    parse_workflow, CachedEmbedding, EmbeddingVector, ModelError, Query, QueryWorkflowRecord, RecordEmbeddings,
    RecordId, ScopeDescription, Thought, Workflow,
};
use crate::prompts::PromptSuite;
use crate::similarity::{cosine, top_k_scored, Scored, SimilarityError, DEFAULT_TOP_K};
use crate::store::{ExampleSource, IndexField, StoreError, StoreHandle};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("run is {0:?}, not awaiting a decision")]
    InvalidState(RunStatus),
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("edited workflow is invalid: {0}")]
    InvalidWorkflow(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub icl_k: usize,
    pub convergence_threshold: f64,
    pub max_iterations: usize,
    pub with_thought: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            icl_k: DEFAULT_TOP_K,
            convergence_threshold: 0.9,
            max_iterations: 5,
            with_thought: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.icl_k == 0 {
            return Err(AgentError::InvalidConfig("icl_k must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(AgentError::InvalidConfig("max_iterations must be positive".into()));
        }
        let t = self.convergence_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(AgentError::InvalidConfig(format!(
                "convergence_threshold must be in (0, 1], got {t}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Running,
    AwaitingDecision,
    Accepted,
    Rejected,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Accepted | RunStatus::Rejected | RunStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub index: usize,
    /// Which store field the ICL examples were retrieved by.
    pub retrieved_by: IndexField,
    pub retrieved: Vec<Scored>,
    pub thought: Thought,
    pub workflow: Workflow,
    /// Cosine between this thought and the previous one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thought_similarity: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub query: Query,
    /// Completed iterations.
    pub iteration: usize,
    pub iterations: Vec<Iteration>,
    pub converged: bool,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_id: Option<RecordId>,
    #[serde(skip)]
    query_embedding: Option<EmbeddingVector>,
    #[serde(skip)]
    thought_embedding: Option<EmbeddingVector>,
}

impl RunState {
    pub fn new(query: Query) -> Self {
        Self {
            run_id: uuid::Uuid::new_v4().simple().to_string(),
            query,
            iteration: 0,
            iterations: Vec::new(),
            converged: false,
            status: RunStatus::Running,
            failure: None,
            record_id: None,
            query_embedding: None,
            thought_embedding: None,
        }
    }

    pub fn latest(&self) -> Option<&Iteration> {
        self.iterations.last()
    }

    pub fn fail(&mut self, cause: impl Into<String>) {
        self.status = RunStatus::Failed;
        self.failure = Some(cause.into());
    }

    /// The record an accept would store.
    fn record(&self, workflow: Workflow) -> Option<QueryWorkflowRecord> {
        let last = self.latest()?;
        let mut record = QueryWorkflowRecord::new(self.query.clone(), last.thought.clone(), workflow);
        let thought = self
            .thought_embedding
            .clone()
            .filter(|_| !last.thought.is_empty())
            .map(|v| CachedEmbedding::for_text(last.thought.as_str(), v));
        let query = self
            .query_embedding
            .clone()
            .map(|v| CachedEmbedding::for_text(&self.query.text, v));
        if query.is_some() || thought.is_some() {
            record.embeddings = Some(RecordEmbeddings {
                query,
                thought,
                steps: None,
            });
        }
        Some(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
    AcceptEdited { workflow: Workflow },
}

/// True when the embeddings of two thoughts are at least `threshold` similar.
pub fn converged(prev: &Thought, cur: &Thought, threshold: f64, gateway: &Gateway) -> Result<bool, AgentError> {
    let v = gateway.embed(&[prev.as_str().to_string(), cur.as_str().to_string()])?;
    Ok(cosine(&v[0], &v[1])? >= threshold)
}

enum Node {
    Retrieve,
    Reason(Vec<Scored>, IndexField),
    Converge,
    Done,
}

pub struct Agent<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSuite,
    pub scope: &'a ScopeDescription,
    pub config: AgentConfig,
}

impl<'a> Agent<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptSuite, scope: &'a ScopeDescription, config: AgentConfig) -> Self {
        Self {
            gateway,
            prompts,
            scope,
            config,
        }
    }

    pub fn run<S: ExampleSource + ?Sized>(&self, query: Query, source: &S) -> RunState {
        self.run_observed(RunState::new(query), source, &mut |_| {})
    }

    /// Drives `state` until it awaits a decision or fails, calling `observer`
    /// after every node transition.
    pub fn run_observed<S: ExampleSource + ?Sized>(
        &self,
        mut state: RunState,
        source: &S,
        observer: &mut dyn FnMut(&RunState),
    ) -> RunState {
        if let Err(e) = self.config.validate() {
            state.fail(e.to_string());
            observer(&state);
            return state;
        }
        observer(&state);
        let mut node = Node::Retrieve;
        loop {
            let step = match node {
                Node::Retrieve => self.retrieve(&mut state, source),
                Node::Reason(retrieved, by) => self.reason(&mut state, source, retrieved, by),
                Node::Converge => self.converge(&mut state),
                Node::Done => {
                    state.status = RunStatus::AwaitingDecision;
                    observer(&state);
                    return state;
                }
            };
            match step {
                Ok(next) => node = next,
                Err(cause) => {
                    state.fail(cause);
                    observer(&state);
                    return state;
                }
            }
            observer(&state);
        }
    }

    fn retrieve<S: ExampleSource + ?Sized>(&self, state: &mut RunState, source: &S) -> Result<Node, String> {
        let (field, probe) = match state.iterations.last() {
            None => {
                if state.query_embedding.is_none() {
                    state.query_embedding = Some(self.gateway.embed_one(&state.query.text).map_err(cause("embedding query"))?);
                }
                (IndexField::Query, state.query_embedding.clone())
            }
            Some(last) => {
                if state.thought_embedding.is_none() {
                    state.thought_embedding =
                        Some(self.gateway.embed_one(last.thought.as_str()).map_err(cause("embedding thought"))?);
                }
                (IndexField::Thought, state.thought_embedding.clone())
            }
        };
        if source.size() == 0 {
            return Ok(Node::Reason(Vec::new(), field));
        }
        let index = source.build_index(field).map_err(cause("building retrieval index"))?;
        let probe = probe.expect("probe embedded above");
        let retrieved = top_k_scored(&probe, &index.entries, self.config.icl_k).map_err(cause("retrieving examples"))?;
        Ok(Node::Reason(retrieved, field))
    }

    fn reason<S: ExampleSource + ?Sized>(
        &self,
        state: &mut RunState,
        source: &S,
        retrieved: Vec<Scored>,
        retrieved_by: IndexField,
    ) -> Result<Node, String> {
        let ids: Vec<RecordId> = retrieved.iter().map(|s| s.id).collect();
        let icl = source.fetch(&ids);
        let request = self
            .prompts
            .workflow(self.scope, &icl, &state.query, self.config.with_thought)
            .map_err(cause("building workflow prompt"))?;

        let mut last_err = String::new();
        let mut parsed = None;
        for attempt in 0..2 {
            match self.gateway.chat(&request) {
                Ok(raw) => match parse_workflow(&raw) {
                    Ok((thought, _)) if self.config.with_thought && thought.is_empty() => {
                        last_err = "reasoner returned no thought".into();
                    }
                    Ok(pair) => {
                        parsed = Some(pair);
                        break;
                    }
                    Err(e) => last_err = e.to_string(),
                },
                Err(e) => last_err = e.to_string(),
            }
            tracing::warn!(run = %state.run_id, attempt, error = %last_err, "reasoner call failed");
        }
        let (thought, workflow) = parsed.ok_or_else(|| format!("reasoner failed twice: {last_err}"))?;

        state.iterations.push(Iteration {
            index: state.iterations.len(),
            retrieved_by,
            retrieved,
            thought,
            workflow,
            thought_similarity: None,
        });
        state.iteration = state.iterations.len();
        let first = state.iterations.len() == 1;
        if !self.config.with_thought || (first && state.iteration >= self.config.max_iterations) {
            return Ok(Node::Done);
        }
        Ok(if first { Node::Retrieve } else { Node::Converge })
    }

    fn converge(&self, state: &mut RunState) -> Result<Node, String> {
        let n = state.iterations.len();
        let prev = state
            .thought_embedding
            .clone()
            .expect("the previous thought was embedded for retrieval");
        let cur = self
            .gateway
            .embed_one(state.iterations[n - 1].thought.as_str())
            .map_err(cause("embedding thought"))?;
        let similarity = cosine(&prev, &cur).map_err(cause("comparing thoughts"))?;
        state.iterations[n - 1].thought_similarity = Some(similarity);
        state.thought_embedding = Some(cur);
        if similarity >= self.config.convergence_threshold {
            state.converged = true;
            return Ok(Node::Done);
        }
        if n >= self.config.max_iterations {
            return Ok(Node::Done);
        }
        Ok(Node::Retrieve)
    }
}

fn cause<E: std::fmt::Display>(what: &'static str) -> impl FnOnce(E) -> String {
    move |e| format!("{what}: {e}")
}

/// Applies an operator decision. Accepting appends the final thought and the
/// chosen workflow to the store; rejecting writes them to the audit log.
pub fn decide(run: &mut RunState, decision: Decision, store: &mut StoreHandle) -> Result<Option<RecordId>, AgentError> {
    if run.status != RunStatus::AwaitingDecision {
        return Err(AgentError::InvalidState(run.status));
    }
    let last = run.latest().ok_or(AgentError::InvalidState(run.status))?;
    let workflow = match &decision {
        Decision::AcceptEdited { workflow } => Workflow::new(workflow.steps.clone())?,
        _ => last.workflow.clone(),
    };
    let record = run.record(workflow).expect("awaiting runs have an iteration");
    match decision {
        Decision::Reject => {
            store.log_rejected(record)?;
            run.status = RunStatus::Rejected;
            Ok(None)
        }
        Decision::Accept | Decision::AcceptEdited { .. } => {
            let id = store.append(record)?;
            run.status = RunStatus::Accepted;
            run.record_id = Some(id);
            Ok(Some(id))
        }
    }
}
