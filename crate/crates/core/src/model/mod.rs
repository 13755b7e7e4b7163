//! Domain types shared by every stage of the pipeline: queries, workflows,
//! thoughts, stored records, extracted terms, and distilled API functions.

mod text;
mod validate;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

pub use text::{json_payload, parse_workflow, render_workflow};
pub use validate::{validate_record, EmbeddingField, Violation};

/// Default embedding width, matching `text-embedding-3-small`.
pub const DEFAULT_EMBEDDING_DIM: usize = 1536;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("malformed model output: {0}")]
    MalformedOutput(String),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
}

fn invalid(what: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        what,
        reason: reason.into(),
    }
}

/// The fixed context every prompt carries: a short description of the
/// analytics domain the system serves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeDescription {
    pub title: String,
    pub text: String,
}

impl ScopeDescription {
    pub fn new(title: impl Into<String>, text: impl Into<String>) -> Result<Self, ModelError> {
        let title = title.into().trim().to_string();
        let text = text.into().trim().to_string();
        if title.is_empty() {
            return Err(invalid("scope", "title is empty"));
        }
        if text.is_empty() {
            return Err(invalid("scope", "text is empty"));
        }
        Ok(Self { title, text })
    }

    /// Builds a scope from a document whose first non-empty line is the title
    /// (a leading markdown `#` is stripped).
    pub fn from_document(doc: &str) -> Result<Self, ModelError> {
        let mut lines = doc.lines().skip_while(|l| l.trim().is_empty());
        let title = lines
            .next()
            .map(|l| l.trim().trim_start_matches('#').trim().to_string())
            .unwrap_or_default();
        let rest: Vec<&str> = lines.collect();
        Self::new(title, rest.join("\n"))
    }
}

/// Query complexity, ordered from simplest to hardest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComplexityLevel {
    Simple,
    Moderate,
    ComplexSingleGoal,
    MultiGoal,
}

impl ComplexityLevel {
    pub const ALL: [ComplexityLevel; 4] = [
        ComplexityLevel::Simple,
        ComplexityLevel::Moderate,
        ComplexityLevel::ComplexSingleGoal,
        ComplexityLevel::MultiGoal,
    ];

    /// Snake-case key used in model-facing JSON.
    pub fn key(self) -> &'static str {
        match self {
            ComplexityLevel::Simple => "simple",
            ComplexityLevel::Moderate => "moderate",
            ComplexityLevel::ComplexSingleGoal => "complex_single_goal",
            ComplexityLevel::MultiGoal => "multi_goal",
        }
    }

    /// Human-readable description used inside prompts.
    pub fn describe(self) -> &'static str {
        match self {
            ComplexityLevel::Simple => "simple single-goal query",
            ComplexityLevel::Moderate => "moderate single-goal query",
            ComplexityLevel::ComplexSingleGoal => "complex single-goal query",
            ComplexityLevel::MultiGoal => "complex multi-goal query",
        }
    }
}

impl fmt::Display for ComplexityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ComplexityLevel::Simple => "Simple",
            ComplexityLevel::Moderate => "Moderate",
            ComplexityLevel::ComplexSingleGoal => "ComplexSingleGoal",
            ComplexityLevel::MultiGoal => "MultiGoal",
        };
        f.write_str(name)
    }
}

impl FromStr for ComplexityLevel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "simple" => Ok(ComplexityLevel::Simple),
            "moderate" => Ok(ComplexityLevel::Moderate),
            "complexsinglegoal" | "complex" => Ok(ComplexityLevel::ComplexSingleGoal),
            "multigoal" | "complexmultigoal" => Ok(ComplexityLevel::MultiGoal),
            _ => Err(invalid("complexity level", format!("unknown level {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryOrigin {
    Generated,
    UserSubmitted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub level: ComplexityLevel,
    pub origin: QueryOrigin,
}

impl Query {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        level: ComplexityLevel,
        origin: QueryOrigin,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        let text = text.into().trim().to_string();
        if id.trim().is_empty() {
            return Err(invalid("query", "id is empty"));
        }
        if text.is_empty() {
            return Err(invalid("query", "text is empty"));
        }
        Ok(Self {
            id,
            text,
            level,
            origin,
        })
    }

    /// A query typed by an operator, identified by a fresh random id.
    pub fn user(text: impl Into<String>, level: ComplexityLevel) -> Result<Self, ModelError> {
        Self::new(
            format!("u-{}", uuid::Uuid::new_v4().simple()),
            text,
            level,
            QueryOrigin::UserSubmitted,
        )
    }

    /// A model-generated query; the id is derived from its level and text so
    /// regenerating the same query yields the same id.
    pub fn generated(text: impl Into<String>, level: ComplexityLevel) -> Result<Self, ModelError> {
        let text = text.into();
        let id = format!(
            "g-{}",
            &text_digest(&format!("{}\n{}", level.key(), text.trim()))[..12]
        );
        Self::new(id, text, level, QueryOrigin::Generated)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowStep {
    pub index: usize,
    pub task_description: String,
    pub step_description: String,
}

impl WorkflowStep {
    /// Text used when embedding a step.
    pub fn embedding_text(&self) -> String {
        format!("{} {}", self.task_description, self.step_description)
            .trim()
            .to_string()
    }
}

/// An ordered list of single-goal steps. Constructed through [`Workflow::new`]
/// the invariants hold; the field stays public so that stored records can be
/// inspected and validated after deserialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workflow {
    pub steps: Vec<WorkflowStep>,
}

impl Workflow {
    pub fn new(steps: Vec<WorkflowStep>) -> Result<Self, ModelError> {
        let wf = Self { steps };
        wf.check().map_err(|reason| invalid("workflow", reason))?;
        Ok(wf)
    }

    /// Builds a workflow from `(task, detail)` pairs, numbering from 1.
    pub fn from_pairs<T, D>(pairs: impl IntoIterator<Item = (T, D)>) -> Result<Self, ModelError>
    where
        T: Into<String>,
        D: Into<String>,
    {
        let steps = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (t, d))| WorkflowStep {
                index: i + 1,
                task_description: t.into(),
                step_description: d.into(),
            })
            .collect();
        Self::new(steps)
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err("workflow has no steps".into());
        }
        for (pos, step) in self.steps.iter().enumerate() {
            if step.index != pos + 1 {
                return Err(format!(
                    "step indices must run 1..n without gaps; position {} has index {}",
                    pos + 1,
                    step.index
                ));
            }
            if step.task_description.trim().is_empty() {
                return Err(format!("step {} has an empty task description", step.index));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// The model's free-form reasoning about a query. Empty only when prompting
/// without the thought instruction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Thought(pub String);

impl Thought {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.trim().is_empty()
    }
}

impl fmt::Display for Thought {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(invalid("embedding", "vector is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("embedding", "vector has non-finite entries"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Stable short digest of a text; identifies which text a cached embedding
/// was computed from.
pub fn text_digest(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedEmbedding {
    pub digest: String,
    pub vector: EmbeddingVector,
}

impl CachedEmbedding {
    pub fn for_text(text: &str, vector: EmbeddingVector) -> Self {
        Self {
            digest: text_digest(text),
            vector,
        }
    }

    pub fn matches(&self, text: &str) -> bool {
        self.digest == text_digest(text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordEmbeddings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<CachedEmbedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<CachedEmbedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<CachedEmbedding>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub u64);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One accepted (query, thought, workflow) triple plus its embedding caches.
/// Field order here is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryWorkflowRecord {
    pub id: RecordId,
    pub query: Query,
    pub thought: Thought,
    pub workflow: Workflow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<RecordEmbeddings>,
    #[serde(with = "rfc3339")]
    pub created_at: DateTime<Utc>,
    pub accepted: bool,
}

impl QueryWorkflowRecord {
    /// A fresh accepted record; the store assigns the real id on append.
    pub fn new(query: Query, thought: Thought, workflow: Workflow) -> Self {
        Self {
            id: RecordId(0),
            query,
            thought,
            workflow,
            embeddings: None,
            created_at: Utc::now(),
            accepted: true,
        }
    }

    pub fn embeddings(&self) -> Option<&RecordEmbeddings> {
        self.embeddings.as_ref()
    }

    /// The cached query embedding, if present and computed from the current text.
    pub fn query_embedding(&self) -> Option<&EmbeddingVector> {
        let cached = self.embeddings.as_ref()?.query.as_ref()?;
        cached.matches(&self.query.text).then_some(&cached.vector)
    }

    pub fn thought_embedding(&self) -> Option<&EmbeddingVector> {
        let cached = self.embeddings.as_ref()?.thought.as_ref()?;
        cached.matches(self.thought.as_str()).then_some(&cached.vector)
    }

    /// Step embeddings, present only when every step has a fresh cache entry.
    pub fn step_embeddings(&self) -> Option<Vec<&EmbeddingVector>> {
        let cached = self.embeddings.as_ref()?.steps.as_ref()?;
        if cached.len() != self.workflow.steps.len() {
            return None;
        }
        cached
            .iter()
            .zip(&self.workflow.steps)
            .map(|(c, s)| c.matches(&s.embedding_text()).then_some(&c.vector))
            .collect()
    }
}

mod rfc3339 {
    use super::*;

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// The four-slot term tuple extracted from one workflow step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermTuple {
    pub overall_action: String,
    pub action: String,
    pub object: String,
    pub attributes: Vec<String>,
}

impl TermTuple {
    /// Normalizes to lowercase and enforces single-word actions.
    pub fn new(
        overall_action: &str,
        action: &str,
        object: &str,
        attributes: impl IntoIterator<Item = impl AsRef<str>>,
    ) -> Result<Self, ModelError> {
        let norm = |s: &str| s.trim().to_lowercase();
        let overall_action = norm(overall_action);
        let action = norm(action);
        for (slot, word) in [("overall_action", &overall_action), ("action", &action)] {
            if word.is_empty() {
                return Err(invalid("terms", format!("{slot} is empty")));
            }
            if word.chars().any(char::is_whitespace) {
                return Err(invalid(
                    "terms",
                    format!("{slot} must be a single word, got {word:?}"),
                ));
            }
        }
        let attributes = attributes
            .into_iter()
            .map(|a| norm(a.as_ref()))
            .filter(|a| !a.is_empty())
            .collect();
        Ok(Self {
            overall_action,
            action,
            object: norm(object),
            attributes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StepCategory {
    Analysis,
    Output,
    Data,
}

impl StepCategory {
    pub const ALL: [StepCategory; 3] = [StepCategory::Analysis, StepCategory::Output, StepCategory::Data];
}

impl fmt::Display for StepCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepCategory::Analysis => "Analysis",
            StepCategory::Output => "Output",
            StepCategory::Data => "Data",
        })
    }
}

impl FromStr for StepCategory {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "analysis" => Ok(StepCategory::Analysis),
            "output" => Ok(StepCategory::Output),
            "data" => Ok(StepCategory::Data),
            _ => Err(invalid("step category", format!("unknown category {s:?}"))),
        }
    }
}

/// Points at one step of one stored query.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StepRef {
    pub query_id: String,
    pub step_index: usize,
}

impl fmt::Display for StepRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.query_id, self.step_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiParameter {
    pub name: String,
    #[serde(rename = "type")]
    pub semantic_type: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionUse {
    pub step: StepRef,
    /// True when the function already existed before this step was mapped.
    pub reused: bool,
}

/// A distilled backend function that one or more workflow steps map onto.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiFunctionSpec {
    pub name: String,
    pub purpose: String,
    pub parameters: Vec<ApiParameter>,
    pub category: StepCategory,
    pub action_group: String,
    pub provenance: Vec<FunctionUse>,
}

/// A stored step together with its extracted terms and category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedStep {
    pub provenance: StepRef,
    pub step: WorkflowStep,
    pub terms: TermTuple,
    pub category: StepCategory,
}
