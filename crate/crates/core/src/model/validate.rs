use std::fmt;

use serde::Serialize;

use super::{CachedEmbedding, QueryWorkflowRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EmbeddingField {
    Query,
    Thought,
    Step(usize),
}

/// One broken invariant found on a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    EmptyQueryId,
    EmptyQueryText,
    EmptyWorkflow,
    NonContiguousStep { position: usize, index: usize },
    EmptyTaskDescription { index: usize },
    DimensionMismatch { field: EmbeddingField, expected: usize, actual: usize },
    NonFiniteEmbedding { field: EmbeddingField },
    StepEmbeddingCount { expected: usize, actual: usize },
    NotAccepted,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyQueryId => write!(f, "query id is empty"),
            Violation::EmptyQueryText => write!(f, "query text is empty"),
            Violation::EmptyWorkflow => write!(f, "workflow has no steps"),
            Violation::NonContiguousStep { position, index } => {
                write!(f, "step at position {position} has index {index}")
            }
            Violation::EmptyTaskDescription { index } => {
                write!(f, "step {index} has an empty task description")
            }
            Violation::DimensionMismatch { field, expected, actual } => {
                write!(f, "{field:?} embedding has {actual} dims, expected {expected}")
            }
            Violation::NonFiniteEmbedding { field } => {
                write!(f, "{field:?} embedding has non-finite values")
            }
            Violation::StepEmbeddingCount { expected, actual } => {
                write!(f, "{actual} step embeddings cached for {expected} steps")
            }
            Violation::NotAccepted => write!(f, "record is not accepted"),
        }
    }
}

/// Checks every record invariant; an empty result means the record is valid.
pub fn validate_record(record: &QueryWorkflowRecord, dim: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.query.id.trim().is_empty() {
        out.push(Violation::EmptyQueryId);
    }
    if record.query.text.trim().is_empty() {
        out.push(Violation::EmptyQueryText);
    }
    if record.workflow.steps.is_empty() {
        out.push(Violation::EmptyWorkflow);
    }
    for (pos, step) in record.workflow.steps.iter().enumerate() {
        if step.index != pos + 1 {
            out.push(Violation::NonContiguousStep {
                position: pos + 1,
                index: step.index,
            });
        }
        if step.task_description.trim().is_empty() {
            out.push(Violation::EmptyTaskDescription { index: step.index });
        }
    }
    if let Some(emb) = &record.embeddings {
        let mut check = |field: EmbeddingField, cached: &CachedEmbedding| {
            let values = cached.vector.values();
            if values.len() != dim {
                out.push(Violation::DimensionMismatch {
                    field,
                    expected: dim,
                    actual: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFiniteEmbedding { field });
            }
        };
        if let Some(q) = &emb.query {
            check(EmbeddingField::Query, q);
        }
        if let Some(t) = &emb.thought {
            check(EmbeddingField::Thought, t);
        }
        if let Some(steps) = &emb.steps {
            for (i, s) in steps.iter().enumerate() {
                check(EmbeddingField::Step(i + 1), s);
            }
            if steps.len() != record.workflow.steps.len() {
                out.push(Violation::StepEmbeddingCount {
                    expected: record.workflow.steps.len(),
                    actual: steps.len(),
                });
            }
        }
    }
    if !record.accepted {
        out.push(Violation::NotAccepted);
    }
    out
}
