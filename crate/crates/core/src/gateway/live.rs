//! HTTP client for OpenAI-compatible `chat/completions` and `embeddings` endpoints.

use std::collections::BTreeMap;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{ChatRequest, GatewayError, Speaker};
use crate::model::EmbeddingVector;

pub struct LiveBackend {
    base_url: String,
    api_key: String,
    client: Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

impl LiveBackend {
    pub fn new(endpoint: &str, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        let api_key = api_key.into();
        if api_key.trim().is_empty() {
            return Err(GatewayError::Config("live backend requires a credential".into()));
        }
        let client = Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            base_url: endpoint.trim_end_matches('/').to_string(),
            api_key,
            client,
        })
    }

    /// Reads the credential from the named environment variable.
    pub fn from_env(endpoint: &str, credential_env: &str) -> Result<Self, GatewayError> {
        let key = std::env::var(credential_env).map_err(|_| {
            GatewayError::Config(format!(
                "environment variable {credential_env} is not set; export the API key there"
            ))
        })?;
        Self::new(endpoint, key)
    }

    fn post(&self, path: &str, body: &Value, timeout: Duration) -> Result<Value, GatewayError> {
        let url = format!("{}/{path}", self.base_url);
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .timeout(timeout)
            .json(body)
            .send()
            .map_err(map_transport)?;
        let status = resp.status();
        let text = resp.text().map_err(map_transport)?;
        if !status.is_success() {
            return Err(GatewayError::Provider {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::InvalidResponse(e.to_string()))
    }

    pub(super) fn complete(
        &self,
        model: &str,
        request: &ChatRequest,
        params: &BTreeMap<String, Value>,
        timeout: Duration,
    ) -> Result<String, GatewayError> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.speaker {
                    Speaker::System => "system",
                    Speaker::User => "user",
                    Speaker::Assistant => "assistant",
                };
                json!({ "role": role, "content": m.text })
            })
            .collect();
        let mut body = json!({ "model": model, "messages": messages, "n": 1 });
        if let Value::Object(map) = &mut body {
            for (k, v) in params {
                map.insert(k.clone(), v.clone());
            }
        }
        let raw = self.post("chat/completions", &body, timeout)?;
        let parsed: ChatResponse =
            serde_json::from_value(raw).map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::InvalidResponse("response has no message content".into()))
    }

    pub(super) fn embed(
        &self,
        model: &str,
        texts: &[String],
        dim: usize,
        timeout: Duration,
    ) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let body = json!({ "model": model, "input": texts, "dimensions": dim });
        let raw = self.post("embeddings", &body, timeout)?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_value(raw).map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
        parsed.data.sort_by_key(|d| d.index);
        parsed
            .data
            .into_iter()
            .map(|d| EmbeddingVector::new(d.embedding).map_err(|e| GatewayError::InvalidResponse(e.to_string())))
            .collect()
    }
}

fn map_transport(e: reqwest::Error) -> GatewayError {
    if e.is_timeout() {
        GatewayError::Timeout { attempts: 1 }
    } else {
        GatewayError::Transport(e.to_string())
    }
}
