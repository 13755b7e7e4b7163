//! Deterministic offline backend.
//!
//! Chat responses come from, in lookup order: exact request fingerprints,
//! substring rules, then code responders. An entry or rule holding several
//! responses returns them in call order and repeats the last one, so a fixed
//! sequence of requests always yields the same sequence of responses.
//! Embeddings are seeded from a hash of the text, so equal texts get equal
//! vectors and distinct texts are nearly orthogonal; explicit vectors can be
//! pinned per text.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, GatewayError, ModelRole};
use crate::model::EmbeddingVector;

/// Code-defined responder; returns `None` to decline a request.
pub type Responder = Box<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub responses: Vec<String>,
}

impl ScriptEntry {
    pub fn single(text: impl Into<String>) -> Self {
        Self { responses: vec![text.into()] }
    }

    pub fn sequence<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self {
            responses: texts.into_iter().map(Into::into).collect(),
        }
    }
}

/// Matches any request for `role` (or any role) whose message text contains `contains`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<ModelRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub responses: Vec<String>,
}

impl ScriptRule {
    pub fn for_role(role: ModelRole, response: impl Into<String>) -> Self {
        Self {
            role: Some(role),
            contains: None,
            responses: vec![response.into()],
        }
    }

    pub fn containing(role: ModelRole, needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            role: Some(role),
            contains: Some(needle.into()),
            responses: vec![response.into()],
        }
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        self.role.is_none_or(|r| r == request.role)
            && self
                .contains
                .as_deref()
                .is_none_or(|needle| request.messages.iter().any(|m| m.text.contains(needle)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedEmbedding {
    pub text: String,
    /// Leading components; zero-padded to the configured dimension.
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintEntry {
    pub fingerprint: String,
    pub responses: Vec<String>,
}

/// On-disk script: JSON with optional `entries`, `rules`, and `embeddings`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptFile {
    pub entries: Vec<FingerprintEntry>,
    pub rules: Vec<ScriptRule>,
    pub embeddings: Vec<ScriptedEmbedding>,
}

#[derive(Default)]
pub struct ScriptedBackend {
    entries: HashMap<String, ScriptEntry>,
    rules: Vec<ScriptRule>,
    responders: Vec<(Option<ModelRole>, Responder)>,
    embeddings: HashMap<String, Vec<f64>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: ScriptFile) -> Self {
        let mut backend = Self::new();
        for e in script.entries {
            backend.insert(e.fingerprint, ScriptEntry { responses: e.responses });
        }
        backend.rules = script.rules;
        for e in script.embeddings {
            backend.pin_embedding(e.text, e.vector);
        }
        backend
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("cannot read script {}: {e}", path.display())))?;
        let script: ScriptFile = serde_json::from_str(&raw)
            .map_err(|e| GatewayError::Config(format!("bad script {}: {e}", path.display())))?;
        Ok(Self::from_script(script))
    }

    pub fn insert(&mut self, fingerprint: impl Into<String>, entry: ScriptEntry) -> &mut Self {
        self.entries.insert(fingerprint.into(), entry);
        self
    }

    /// Scripts the exact request.
    pub fn expect(&mut self, request: &ChatRequest, entry: ScriptEntry) -> &mut Self {
        self.insert(request.fingerprint(), entry)
    }

    pub fn push_rule(&mut self, rule: ScriptRule) -> &mut Self {
        self.rules.push(rule);
        self
    }

    pub fn push_responder(&mut self, role: Option<ModelRole>, responder: Responder) -> &mut Self {
        self.responders.push((role, responder));
        self
    }

    pub fn pin_embedding(&mut self, text: impl Into<String>, leading: Vec<f64>) -> &mut Self {
        self.embeddings.insert(text.into(), leading);
        self
    }

    fn next_of(&self, key: String, responses: &[String]) -> Option<String> {
        let mut cursors = self.cursors.lock().unwrap_or_else(|e| e.into_inner());
        let n = cursors.entry(key).or_insert(0);
        let out = responses.get(*n).or(responses.last()).cloned();
        *n += 1;
        out
    }

    pub(super) fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let fp = request.fingerprint();
        if let Some(entry) = self.entries.get(&fp) {
            if let Some(text) = self.next_of(format!("fp:{fp}"), &entry.responses) {
                return Ok(text);
            }
        }
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.matches(request) {
                if let Some(text) = self.next_of(format!("rule:{i}"), &rule.responses) {
                    return Ok(text);
                }
            }
        }
        for (role, responder) in &self.responders {
            if role.is_none_or(|r| r == request.role) {
                if let Some(text) = responder(request) {
                    return Ok(text);
                }
            }
        }
        Err(GatewayError::ScriptMiss {
            role: request.role,
            fingerprint: fp,
        })
    }

    pub(super) fn embed(&self, texts: &[String], dim: usize) -> Result<Vec<EmbeddingVector>, GatewayError> {
        texts
            .iter()
            .map(|t| match self.embeddings.get(t) {
                Some(leading) => pinned_embedding(leading, dim),
                None => Ok(hashed_embedding(t, dim)),
            })
            .collect()
    }
}

fn pinned_embedding(leading: &[f64], dim: usize) -> Result<EmbeddingVector, GatewayError> {
    if leading.len() > dim {
        return Err(GatewayError::Config(format!(
            "pinned embedding has {} components, dimension is {dim}",
            leading.len()
        )));
    }
    let mut values = leading.to_vec();
    values.resize(dim, 0.0);
    EmbeddingVector::new(values).map_err(|e| GatewayError::Config(e.to_string()))
}

/// Unit vector drawn from a Gaussian seeded by the SHA-256 of the text.
pub fn hashed_embedding(text: &str, dim: usize) -> EmbeddingVector {
    let seed: [u8; 32] = Sha256::digest(text.as_bytes()).into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut values: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut values {
        *v /= norm;
    }
    EmbeddingVector::new(values).expect("gaussian samples are finite")
}
