//! Single entry point for chat completions and embeddings.
//!
//! Every model call in the crate goes through [`Gateway`], which routes each
//! request to the model configured for its [`ModelRole`], retries timeouts
//! with exponential backoff, and counts calls. Two backends exist: a live
//! HTTP client for OpenAI-compatible endpoints and a scripted, fully
//! deterministic backend for offline runs and tests.

mod live;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{EmbeddingVector, DEFAULT_EMBEDDING_DIM};

pub use live::LiveBackend;
pub use scripted::{Responder, ScriptEntry, ScriptFile, ScriptRule, ScriptedBackend, ScriptedEmbedding};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("model call timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("no scripted response for {role} request (fingerprint {fingerprint})")]
    ScriptMiss { role: ModelRole, fingerprint: String },
    #[error("embedding input is empty")]
    EmptyInput,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gateway configuration: {0}")]
    Config(String),
}

impl GatewayError {
    fn retriable(&self) -> bool {
        matches!(self, GatewayError::Timeout { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    /// Query generation, term extraction, classification, data-agent code.
    Generator,
    /// Workflow generation.
    Reasoner,
    /// API generation.
    Coder,
    Embedder,
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelRole::Generator => "generator",
            ModelRole::Reasoner => "reasoner",
            ModelRole::Coder => "coder",
            ModelRole::Embedder => "embedder",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::System => "system",
            Speaker::User => "user",
            Speaker::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker: Speaker,
    pub text: String,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::System, text: text.into() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::User, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: ModelRole,
    pub messages: Vec<ChatMessage>,
    /// Provider-specific sampling parameters, merged over the role defaults.
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub timeout: Option<Duration>,
}

impl ChatRequest {
    pub fn new(role: ModelRole, messages: Vec<ChatMessage>) -> Result<Self, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::InvalidRequest("chat request has no messages".into()));
        }
        if role == ModelRole::Embedder {
            return Err(GatewayError::InvalidRequest("the embedder role cannot chat".into()));
        }
        Ok(Self {
            role,
            messages,
            params: BTreeMap::new(),
            timeout: None,
        })
    }

    /// Stable digest of the role and message texts. Sampling parameters and
    /// timeouts do not participate.
    pub fn fingerprint(&self) -> String {
        fingerprint(self.role, self.messages.iter().map(|m| m.text.as_str()))
    }

    /// Text of the final user message, or of the last message if none is a user turn.
    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.speaker == Speaker::User)
            .or(self.messages.last())
            .map_or("", |m| m.text.as_str())
    }

    /// All message texts joined, in order.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Computes a request fingerprint from its parts.
pub fn fingerprint<'a>(role: ModelRole, texts: impl IntoIterator<Item = &'a str>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(role.to_string().as_bytes());
    for t in texts {
        hasher.update([0x1e]);
        hasher.update(t.as_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelIds {
    pub generator: String,
    pub reasoner: String,
    pub coder: String,
    pub embedder: String,
}

impl Default for ModelIds {
    fn default() -> Self {
        Self {
            generator: "gpt-4o".into(),
            reasoner: "o3-mini".into(),
            coder: "o3-mini".into(),
            embedder: "text-embedding-3-small".into(),
        }
    }
}

impl ModelIds {
    pub fn for_role(&self, role: ModelRole) -> &str {
        match role {
            ModelRole::Generator => &self.generator,
            ModelRole::Reasoner => &self.reasoner,
            ModelRole::Coder => &self.coder,
            ModelRole::Embedder => &self.embedder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub models: ModelIds,
    /// Default sampling parameters per role. The coder role defaults to high
    /// reasoning effort.
    pub params: BTreeMap<ModelRole, BTreeMap<String, serde_json::Value>>,
    pub embedding_dim: usize,
    pub retries: u32,
    #[serde(with = "millis")]
    pub backoff: Duration,
    #[serde(with = "millis")]
    pub timeout: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        let mut params = BTreeMap::new();
        params.insert(
            ModelRole::Coder,
            BTreeMap::from([("reasoning_effort".to_string(), serde_json::json!("high"))]),
        );
        Self {
            models: ModelIds::default(),
            params,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            retries: 3,
            backoff: Duration::from_secs(1),
            timeout: Duration::from_secs(120),
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

pub enum GatewayBackend {
    Live(LiveBackend),
    Scripted(ScriptedBackend),
}

/// Counters observable by tests and the stats endpoint.
#[derive(Debug, Default)]
struct Metrics {
    chat_calls: [AtomicU64; 4],
    chat_attempts: AtomicU64,
    retries: AtomicU64,
    embed_calls: AtomicU64,
    embedded_texts: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub generator_calls: u64,
    pub reasoner_calls: u64,
    pub coder_calls: u64,
    pub chat_attempts: u64,
    pub retries: u64,
    pub embed_calls: u64,
    pub embedded_texts: u64,
}

impl MetricsSnapshot {
    pub fn calls(&self, role: ModelRole) -> u64 {
        match role {
            ModelRole::Generator => self.generator_calls,
            ModelRole::Reasoner => self.reasoner_calls,
            ModelRole::Coder => self.coder_calls,
            ModelRole::Embedder => self.embed_calls,
        }
    }
}

fn role_slot(role: ModelRole) -> usize {
    match role {
        ModelRole::Generator => 0,
        ModelRole::Reasoner => 1,
        ModelRole::Coder => 2,
        ModelRole::Embedder => 3,
    }
}

pub struct Gateway {
    backend: GatewayBackend,
    config: GatewayConfig,
    metrics: Metrics,
}

impl Gateway {
    pub fn new(backend: GatewayBackend, config: GatewayConfig) -> Self {
        Self {
            backend,
            config,
            metrics: Metrics::default(),
        }
    }

    /// A gateway over a scripted backend with zero backoff.
    pub fn scripted(backend: ScriptedBackend) -> Self {
        Self::scripted_with(backend, GatewayConfig::default())
    }

    pub fn scripted_with(backend: ScriptedBackend, mut config: GatewayConfig) -> Self {
        config.backoff = Duration::ZERO;
        Self::new(GatewayBackend::Scripted(backend), config)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn model_for(&self, role: ModelRole) -> &str {
        self.config.models.for_role(role)
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let m = &self.metrics;
        MetricsSnapshot {
            generator_calls: m.chat_calls[0].load(Ordering::Relaxed),
            reasoner_calls: m.chat_calls[1].load(Ordering::Relaxed),
            coder_calls: m.chat_calls[2].load(Ordering::Relaxed),
            chat_attempts: m.chat_attempts.load(Ordering::Relaxed),
            retries: m.retries.load(Ordering::Relaxed),
            embed_calls: m.embed_calls.load(Ordering::Relaxed),
            embedded_texts: m.embedded_texts.load(Ordering::Relaxed),
        }
    }

    /// Requests exactly one completion and returns its text verbatim.
    pub fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        if request.messages.is_empty() || request.role == ModelRole::Embedder {
            return Err(GatewayError::InvalidRequest("invalid chat request".into()));
        }
        self.metrics.chat_calls[role_slot(request.role)].fetch_add(1, Ordering::Relaxed);
        let model = self.model_for(request.role).to_string();
        let mut params = self.config.params.get(&request.role).cloned().unwrap_or_default();
        params.extend(request.params.clone());
        let timeout = request.timeout.unwrap_or(self.config.timeout);
        self.with_retries(|| {
            self.metrics.chat_attempts.fetch_add(1, Ordering::Relaxed);
            match &self.backend {
                GatewayBackend::Live(live) => live.complete(&model, request, &params, timeout),
                GatewayBackend::Scripted(s) => s.complete(request),
            }
        })
    }

    /// Embeds each text; one vector per input, in order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() || texts.iter().any(|t| t.trim().is_empty()) {
            return Err(GatewayError::EmptyInput);
        }
        self.metrics.embed_calls.fetch_add(1, Ordering::Relaxed);
        self.metrics
            .embedded_texts
            .fetch_add(texts.len() as u64, Ordering::Relaxed);
        let dim = self.config.embedding_dim;
        let vectors = self.with_retries(|| match &self.backend {
            GatewayBackend::Live(live) => live.embed(&self.config.models.embedder, texts, dim, self.config.timeout),
            GatewayBackend::Scripted(s) => s.embed(texts, dim),
        })?;
        if vectors.len() != texts.len() {
            return Err(GatewayError::InvalidResponse(format!(
                "{} vectors returned for {} texts",
                vectors.len(),
                texts.len()
            )));
        }
        if let Some(bad) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(GatewayError::InvalidResponse(format!(
                "embedding has {} dims, expected {dim}",
                bad.dim()
            )));
        }
        Ok(vectors)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let mut v = self.embed(&[text.to_string()])?;
        Ok(v.remove(0))
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match call() {
                Err(e) if e.retriable() && attempt <= self.config.retries => {
                    self.metrics.retries.fetch_add(1, Ordering::Relaxed);
                    let delay = self.config.backoff * 2u32.saturating_pow(attempt - 1);
                    tracing::warn!(attempt, ?delay, "model call timed out, retrying");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(GatewayError::Timeout { .. }) => return Err(GatewayError::Timeout { attempts: attempt }),
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(role: ModelRole, text: &str) -> ChatRequest {
        ChatRequest::new(role, vec![ChatMessage::system("sys"), ChatMessage::user(text)]).unwrap()
    }

    #[test]
    fn scripted_hit_is_stable_across_gateways() {
        let r = req(ModelRole::Reasoner, "hello");
        let make = || {
            let mut s = ScriptedBackend::new();
            s.insert(r.fingerprint(), ScriptEntry::single("canned text"));
            Gateway::scripted(s)
        };
        assert_eq!(make().chat(&r).unwrap(), "canned text");
        assert_eq!(make().chat(&r).unwrap(), "canned text");
    }

    #[test]
    fn scripted_miss_is_reported() {
        let g = Gateway::scripted(ScriptedBackend::new());
        let err = g.chat(&req(ModelRole::Generator, "nope")).unwrap_err();
        assert!(matches!(err, GatewayError::ScriptMiss { role: ModelRole::Generator, .. }));
    }

    #[test]
    fn fingerprint_ignores_params() {
        let a = req(ModelRole::Coder, "x");
        let mut b = a.clone();
        b.params.insert("temperature".into(), serde_json::json!(0.2));
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), req(ModelRole::Reasoner, "x").fingerprint());
    }

    #[test]
    fn embed_is_deterministic_and_sized() {
        let g = Gateway::scripted(ScriptedBackend::new());
        let v = g.embed(&["a".into(), "a".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].dim(), 1536);
        assert!(matches!(g.embed(&[]), Err(GatewayError::EmptyInput)));
    }

    #[test]
    fn embedder_role_cannot_chat() {
        assert!(ChatRequest::new(ModelRole::Embedder, vec![ChatMessage::user("x")]).is_err());
        assert!(ChatRequest::new(ModelRole::Reasoner, vec![]).is_err());
    }

    #[test]
    fn counts_calls_per_role() {
        let mut s = ScriptedBackend::new();
        s.push_rule(ScriptRule::for_role(ModelRole::Reasoner, "ok"));
        let g = Gateway::scripted(s);
        g.chat(&req(ModelRole::Reasoner, "a")).unwrap();
        g.chat(&req(ModelRole::Reasoner, "b")).unwrap();
        let m = g.metrics();
        assert_eq!(m.reasoner_calls, 2);
        assert_eq!(m.generator_calls, 0);
    }
}
