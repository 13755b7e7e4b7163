//! The accumulative query-workflow database.
//!
//! Records live one JSON object per line in `examples.jsonl`. Appends are
//! fsynced before returning; embedding updates rewrite the file through an
//! atomic rename. Rejected workflows go to a sibling `rejected.jsonl` and
//! never become retrieval candidates.

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::model::{
    validate_record, CachedEmbedding, ComplexityLevel, EmbeddingVector, QueryWorkflowRecord, RecordEmbeddings,
    RecordId, Violation,
};

pub const STORE_FILE: &str = "examples.jsonl";
pub const AUDIT_FILE: &str = "rejected.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("record failed validation: {}", join(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("query id {0:?} is already stored")]
    DuplicateQueryId(String),
    #[error("storage failure on {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error("record {record} has no {field:?} embedding")]
    MissingEmbedding { record: RecordId, field: IndexField },
    #[error("no record with id {0}")]
    UnknownRecord(RecordId),
    #[error("embedding dimension mismatch: store uses {store}, gateway returns {gateway}")]
    DimensionMismatch { store: usize, gateway: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn storage(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Storage {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexField {
    Query,
    Thought,
}

/// Embeddings of one field across the store, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub field: IndexField,
    pub entries: Vec<(RecordId, EmbeddingVector)>,
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Read access the agent needs: retrieval indexes and records by id.
pub trait ExampleSource {
    fn build_index(&self, field: IndexField) -> Result<RetrievalIndex, StoreError>;
    fn fetch(&self, ids: &[RecordId]) -> Vec<QueryWorkflowRecord>;
    fn size(&self) -> usize;
}

/// One record per line, in canonical key order.
pub fn to_line(record: &QueryWorkflowRecord) -> String {
    serde_json::to_string(record).expect("records always serialize")
}

#[derive(Debug)]
pub struct StoreHandle {
    path: PathBuf,
    audit_path: PathBuf,
    records: Vec<QueryWorkflowRecord>,
    dirty: BTreeSet<RecordId>,
    dim: usize,
}

impl StoreHandle {
    /// Opens the store at `path`; a missing file is an empty store.
    pub fn load(path: impl Into<PathBuf>, dim: usize) -> Result<Self, StoreError> {
        let path = path.into();
        let audit_path = path.with_file_name(AUDIT_FILE);
        let mut store = Self {
            path,
            audit_path,
            records: Vec::new(),
            dirty: BTreeSet::new(),
            dim,
        };
        if !store.path.exists() {
            return Ok(store);
        }
        let file = File::open(&store.path).map_err(storage(&store.path))?;
        let mut seen_queries = HashSet::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(storage(&store.path))?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |reason: String| StoreError::CorruptRecord { line: line_no, reason };
            let record: QueryWorkflowRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            let violations = validate_record(&record, dim);
            if !violations.is_empty() {
                return Err(corrupt(join(&violations)));
            }
            if let Some(prev) = store.records.last() {
                if record.id <= prev.id {
                    return Err(corrupt(format!("id {} does not follow {}", record.id, prev.id)));
                }
            }
            if !seen_queries.insert(record.query.id.clone()) {
                return Err(corrupt(format!("duplicate query id {:?}", record.query.id)));
            }
            store.records.push(record);
        }
        store.dirty = store
            .records
            .iter()
            .filter(|r| !fully_embedded(r))
            .map(|r| r.id)
            .collect();
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn audit_path(&self) -> &Path {
        &self.audit_path
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[QueryWorkflowRecord] {
        &self.records
    }

    pub fn get(&self, id: RecordId) -> Option<&QueryWorkflowRecord> {
        self.records
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn find_query(&self, query_id: &str) -> Option<&QueryWorkflowRecord> {
        self.records.iter().find(|r| r.query.id == query_id)
    }

    /// Records needing (re)embedding.
    pub fn dirty(&self) -> &BTreeSet<RecordId> {
        &self.dirty
    }

    /// Records filtered by level and a case-insensitive substring of the query text.
    pub fn search(&self, level: Option<ComplexityLevel>, text: Option<&str>) -> Vec<&QueryWorkflowRecord> {
        let needle = text.map(str::to_lowercase);
        self.records
            .iter()
            .filter(|r| level.is_none_or(|l| r.query.level == l))
            .filter(|r| {
                needle
                    .as_deref()
                    .is_none_or(|n| r.query.text.to_lowercase().contains(n))
            })
            .collect()
    }

    /// Validates, assigns the next id, and durably appends the record.
    pub fn append(&mut self, mut record: QueryWorkflowRecord) -> Result<RecordId, StoreError> {
        let id = RecordId(self.records.last().map_or(1, |r| r.id.0 + 1));
        record.id = id;
        let violations = validate_record(&record, self.dim);
        if !violations.is_empty() {
            return Err(StoreError::ValidationFailed(violations));
        }
        if self.find_query(&record.query.id).is_some() {
            return Err(StoreError::DuplicateQueryId(record.query.id.clone()));
        }
        append_line(&self.path, &to_line(&record))?;
        if !fully_embedded(&record) {
            self.dirty.insert(id);
        }
        self.records.push(record);
        Ok(id)
    }

    /// Logs a declined workflow to the audit file.
    pub fn log_rejected(&self, mut record: QueryWorkflowRecord) -> Result<(), StoreError> {
        record.accepted = false;
        append_line(&self.audit_path, &to_line(&record))
    }

    pub fn rejected_count(&self) -> Result<usize, StoreError> {
        if !self.audit_path.exists() {
            return Ok(0);
        }
        let raw = fs::read_to_string(&self.audit_path).map_err(storage(&self.audit_path))?;
        Ok(raw.lines().filter(|l| !l.trim().is_empty()).count())
    }

    /// Edits a stored record in place and rewrites the file.
    pub fn amend(&mut self, id: RecordId, edit: impl FnOnce(&mut QueryWorkflowRecord)) -> Result<(), StoreError> {
        let pos = self
            .records
            .iter()
            .position(|r| r.id == id)
            .ok_or(StoreError::UnknownRecord(id))?;
        let mut updated = self.records[pos].clone();
        edit(&mut updated);
        updated.id = id;
        let violations = validate_record(&updated, self.dim);
        if !violations.is_empty() {
            return Err(StoreError::ValidationFailed(violations));
        }
        if !fully_embedded(&updated) {
            self.dirty.insert(id);
        }
        self.records[pos] = updated;
        self.rewrite()
    }

    /// Embeds every missing or stale query, thought, and step text. Returns the
    /// number of texts sent to the gateway. On a gateway error the records
    /// finished so far are persisted before the error is returned.
    pub fn ensure_embeddings(&mut self, gateway: &Gateway) -> Result<usize, StoreError> {
        if gateway.embedding_dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                store: self.dim,
                gateway: gateway.embedding_dim(),
            });
        }
        let mut embedded = 0;
        let mut outcome = Ok(());
        for record in &mut self.records {
            match embed_record(record, gateway) {
                Ok(n) => {
                    embedded += n;
                    self.dirty.remove(&record.id);
                }
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        if embedded > 0 {
            self.rewrite()?;
        }
        outcome.map(|()| embedded)
    }

    fn rewrite(&self) -> Result<(), StoreError> {
        let dir = match self.path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&dir).map_err(storage(&dir))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(storage(&dir))?;
        for r in &self.records {
            writeln!(tmp, "{}", to_line(r)).map_err(storage(&self.path))?;
        }
        tmp.as_file().sync_all().map_err(storage(&self.path))?;
        tmp.persist(&self.path).map_err(|e| StoreError::Storage {
            path: self.path.clone(),
            source: e.error,
        })?;
        Ok(())
    }
}

impl ExampleSource for StoreHandle {
    fn build_index(&self, field: IndexField) -> Result<RetrievalIndex, StoreError> {
        let entries = self
            .records
            .iter()
            .map(|r| {
                let v = match field {
                    IndexField::Query => r.query_embedding(),
                    IndexField::Thought => r.thought_embedding(),
                };
                v.cloned()
                    .map(|v| (r.id, v))
                    .ok_or(StoreError::MissingEmbedding { record: r.id, field })
            })
            .collect::<Result<_, _>>()?;
        Ok(RetrievalIndex { field, entries })
    }

    fn fetch(&self, ids: &[RecordId]) -> Vec<QueryWorkflowRecord> {
        ids.iter().filter_map(|id| self.get(*id).cloned()).collect()
    }

    fn size(&self) -> usize {
        self.len()
    }
}

fn append_line(path: &Path, line: &str) -> Result<(), StoreError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(storage(dir))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(storage(path))?;
    writeln!(file, "{line}").map_err(storage(path))?;
    file.sync_all().map_err(storage(path))
}

fn fully_embedded(r: &QueryWorkflowRecord) -> bool {
    r.query_embedding().is_some()
        && (r.thought.is_empty() || r.thought_embedding().is_some())
        && r.step_embeddings().is_some()
}

enum Slot {
    Query,
    Thought,
    Step(usize),
}

fn embed_record(record: &mut QueryWorkflowRecord, gateway: &Gateway) -> Result<usize, StoreError> {
    let mut slots = Vec::new();
    let mut texts = Vec::new();
    if record.query_embedding().is_none() {
        slots.push(Slot::Query);
        texts.push(record.query.text.clone());
    }
    if !record.thought.is_empty() && record.thought_embedding().is_none() {
        slots.push(Slot::Thought);
        texts.push(record.thought.as_str().to_string());
    }
    let cached_steps = record.embeddings.as_ref().and_then(|e| e.steps.clone()).unwrap_or_default();
    for (i, step) in record.workflow.steps.iter().enumerate() {
        let text = step.embedding_text();
        if !cached_steps.get(i).is_some_and(|c| c.matches(&text)) {
            slots.push(Slot::Step(i));
            texts.push(text);
        }
    }
    let step_count = record.workflow.steps.len();
    if texts.is_empty() {
        if cached_steps.len() != step_count {
            record.embeddings.get_or_insert_with(Default::default).steps = Some(cached_steps[..step_count].to_vec());
        }
        return Ok(0);
    }

    let vectors = gateway.embed(&texts)?;
    let emb = record.embeddings.get_or_insert_with(RecordEmbeddings::default);
    let mut steps: Vec<Option<CachedEmbedding>> = (0..step_count).map(|i| cached_steps.get(i).cloned()).collect();
    for ((slot, text), vector) in slots.into_iter().zip(&texts).zip(vectors) {
        let cached = CachedEmbedding::for_text(text, vector);
        match slot {
            Slot::Query => emb.query = Some(cached),
            Slot::Thought => emb.thought = Some(cached),
            Slot::Step(i) => steps[i] = Some(cached),
        }
    }
    emb.steps = Some(steps.into_iter().map(|s| s.expect("every step slot filled")).collect());
    Ok(texts.len())
}
