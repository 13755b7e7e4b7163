#![allow(dead_code)]

use std::path::Path;
use std::time::{Duration, Instant};

use flowsmith::config::ServiceConfig;
use flowsmith::http::{router, Service};
use flowsmith_core::gateway::{Gateway, GatewayConfig, ScriptedBackend};
use flowsmith_core::model::ScopeDescription;
use flowsmith_core::prompts::PromptSuite;
use flowsmith_core::testkit::GOLDEN_SCOPE;
use serde_json::Value;

pub const DIM: usize = 64;

/// Writes a scope file and returns a scripted-backend config rooted at `dir`.
pub fn config_in(dir: &Path, extra: &str) -> ServiceConfig {
    std::fs::write(dir.join("scope.md"), GOLDEN_SCOPE).unwrap();
    let text = format!(
        "scope_file = \"scope.md\"\n[gateway]\nbackend = \"scripted\"\nscript = \"script.json\"\nembedding_dim = {DIM}\n{extra}"
    );
    ServiceConfig::from_toml(&text, dir).unwrap()
}

pub fn service(config: ServiceConfig, backend: ScriptedBackend) -> Service {
    let gateway = Gateway::scripted_with(
        backend,
        GatewayConfig {
            embedding_dim: DIM,
            ..GatewayConfig::default()
        },
    );
    let scope = ScopeDescription::from_document(GOLDEN_SCOPE).unwrap();
    Service::with_parts(config, gateway, PromptSuite::builtin(), scope).unwrap()
}

/// Serves on an ephemeral port from a background runtime; returns the base URL.
pub fn spawn(service: Service) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router(service)).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

pub struct Client {
    pub base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base: String) -> Self {
        Self {
            base,
            http: reqwest::blocking::Client::new(),
        }
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().unwrap();
        let status = r.status().as_u16();
        (status, r.json().unwrap_or(Value::Null))
    }

    pub fn post(&self, path: &str, body: &str) -> (u16, Value) {
        let r = self
            .http
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .unwrap();
        let status = r.status().as_u16();
        (status, r.json().unwrap_or(Value::Null))
    }

    /// Polls a run until it leaves Running, returning every distinct state seen.
    pub fn poll_run(&self, id: &str) -> Vec<Value> {
        let deadline = Instant::now() + Duration::from_secs(20);
        let mut seen: Vec<Value> = Vec::new();
        loop {
            let (status, run) = self.get(&format!("/runs/{id}"));
            assert_eq!(status, 200, "{run}");
            if seen.last() != Some(&run) {
                seen.push(run.clone());
            }
            if run["status"] != "Running" {
                return seen;
            }
            assert!(Instant::now() < deadline, "run {id} never finished");
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    pub fn start_run(&self, text: &str) -> String {
        let body = serde_json::json!({ "query_text": text, "level": "simple" }).to_string();
        let (status, v) = self.post("/runs", &body);
        assert_eq!(status, 202, "{v}");
        v["run_id"].as_str().unwrap().to_string()
    }

    pub fn poll_report(&self, id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let (status, job) = self.get(&format!("/reports/{id}"));
            assert_eq!(status, 200, "{job}");
            if job["status"] != "running" {
                return job;
            }
            assert!(Instant::now() < deadline, "report {id} never finished");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}
