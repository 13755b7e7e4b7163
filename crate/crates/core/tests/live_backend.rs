use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use flowsmith_core::gateway::{
    ChatMessage, ChatRequest, Gateway, GatewayBackend, GatewayConfig, GatewayError, LiveBackend, ModelRole,
};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Seen {
    bodies: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<String>>>,
}

async fn chat(State(seen): State<Seen>, headers: axum::http::HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let auth = headers.get("authorization").and_then(|h| h.to_str().ok()).unwrap_or("").to_string();
    seen.auth.lock().unwrap().push(auth);
    let last = body["messages"].as_array().and_then(|m| m.last()).cloned().unwrap_or_default();
    seen.bodies.lock().unwrap().push(body.clone());
    match last["content"].as_str().unwrap_or("") {
        "slow" => {
            tokio::time::sleep(Duration::from_millis(600)).await;
            (StatusCode::OK, Json(json!({"choices":[{"message":{"content":"late"}}]})))
        }
        "boom" => (StatusCode::BAD_REQUEST, Json(json!({"error":{"message":"bad"}}))),
        _ => (
            StatusCode::OK,
            Json(json!({"choices":[{"message":{"role":"assistant","content":format!("model={}", body["model"].as_str().unwrap())}}]})),
        ),
    }
}

async fn embeddings(State(seen): State<Seen>, Json(body): Json<Value>) -> Json<Value> {
    seen.bodies.lock().unwrap().push(body.clone());
    let dim = body["dimensions"].as_u64().unwrap() as usize;
    let n = body["input"].as_array().unwrap().len();
    // Reversed order exercises index sorting.
    let data: Vec<Value> = (0..n)
        .rev()
        .map(|i| {
            let mut v = vec![0.0; dim];
            v[i % dim] = 1.0;
            json!({"index": i, "embedding": v})
        })
        .collect();
    Json(json!({ "data": data }))
}

fn spawn_server(seen: Seen) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/v1/chat/completions", post(chat))
                .route("/v1/embeddings", post(embeddings))
                .with_state(seen);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn gateway(addr: SocketAddr, timeout: Duration) -> Gateway {
    let live = LiveBackend::new(&format!("http://{addr}/v1/"), "sk-test").unwrap();
    let config = GatewayConfig {
        embedding_dim: 8,
        retries: 2,
        backoff: Duration::ZERO,
        timeout,
        ..GatewayConfig::default()
    };
    Gateway::new(GatewayBackend::Live(live), config)
}

fn req(role: ModelRole, text: &str) -> ChatRequest {
    ChatRequest::new(role, vec![ChatMessage::system("s"), ChatMessage::user(text)]).unwrap()
}

#[test]
fn reasoner_requests_reach_the_reasoner_model() {
    let seen = Seen::default();
    let g = gateway(spawn_server(seen.clone()), Duration::from_secs(5));
    assert_eq!(g.chat(&req(ModelRole::Reasoner, "hi")).unwrap(), "model=o3-mini");
    assert_eq!(g.chat(&req(ModelRole::Generator, "hi")).unwrap(), "model=gpt-4o");
    let bodies = seen.bodies.lock().unwrap();
    assert_eq!(bodies[0]["n"], 1);
    assert_eq!(bodies[0]["messages"][0]["role"], "system");
    assert_eq!(seen.auth.lock().unwrap()[0], "Bearer sk-test");
}

#[test]
fn coder_role_carries_default_params() {
    let seen = Seen::default();
    let g = gateway(spawn_server(seen.clone()), Duration::from_secs(5));
    g.chat(&req(ModelRole::Coder, "hi")).unwrap();
    assert_eq!(seen.bodies.lock().unwrap()[0]["reasoning_effort"], "high");
}

#[test]
fn provider_errors_surface_status_and_body() {
    let g = gateway(spawn_server(Seen::default()), Duration::from_secs(5));
    match g.chat(&req(ModelRole::Reasoner, "boom")).unwrap_err() {
        GatewayError::Provider { status, body } => {
            assert_eq!(status, 400);
            assert!(body.contains("bad"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn timeouts_are_retried_then_reported() {
    let g = gateway(spawn_server(Seen::default()), Duration::from_millis(150));
    let err = g.chat(&req(ModelRole::Reasoner, "slow")).unwrap_err();
    assert!(matches!(err, GatewayError::Timeout { attempts: 3 }), "{err:?}");
    let m = g.metrics();
    assert_eq!(m.retries, 2);
    assert_eq!(m.chat_attempts, 3);
    assert_eq!(m.reasoner_calls, 1);
}

#[test]
fn embeddings_are_ordered_by_index() {
    let seen = Seen::default();
    let g = gateway(spawn_server(seen.clone()), Duration::from_secs(5));
    let v = g.embed(&["a".into(), "b".into(), "c".into()]).unwrap();
    assert_eq!(v.len(), 3);
    assert_eq!(v[1].values()[1], 1.0);
    assert_eq!(seen.bodies.lock().unwrap()[0]["model"], "text-embedding-3-small");
}

#[test]
fn missing_credential_is_a_config_error() {
    assert!(matches!(LiveBackend::new("http://localhost", ""), Err(GatewayError::Config(_))));
    assert!(LiveBackend::from_env("http://localhost", "FLOWSMITH_TEST_UNSET_VAR").is_err());
}
