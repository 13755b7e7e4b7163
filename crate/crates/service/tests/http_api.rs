mod common;

use common::{config_in, service, spawn, Client};
use flowsmith::journal::LOST_RUN;
use flowsmith_core::store::StoreHandle;
use flowsmith_core::testkit::{distill_backend, distill_corpus, world_backend};
use serde_json::json;

fn status_rank(s: &str) -> u8 {
    match s {
        "Running" => 0,
        "AwaitingDecision" => 1,
        _ => 2,
    }
}

#[test]
fn run_lifecycle_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::new(spawn(service(config_in(dir.path(), ""), world_backend())));

    let id = api.start_run("Weekly yield per product");
    let seen = api.poll_run(&id);
    let last = seen.last().unwrap();
    assert_eq!(last["status"], "AwaitingDecision", "{last}");
    assert_eq!(last["converged"], true);
    assert_eq!(last["iteration"], 2);
    for pair in seen.windows(2) {
        assert!(pair[0]["iteration"].as_u64() <= pair[1]["iteration"].as_u64());
        assert!(status_rank(pair[0]["status"].as_str().unwrap()) <= status_rank(pair[1]["status"].as_str().unwrap()));
    }
    assert!(last["iterations"][0]["thought"].as_str().unwrap().contains("Weekly yield"));
    assert!(!last["iterations"][1]["workflow"]["steps"].as_array().unwrap().is_empty());

    let (_, before) = api.get("/stats");
    assert_eq!(before["store_size"], 0);
    let (status, run) = api.post(&format!("/runs/{id}/decision"), r#"{"decision":"accept"}"#);
    assert_eq!(status, 200, "{run}");
    assert_eq!(run["status"], "Accepted");
    assert_eq!(run["record_id"], 1);
    let (_, after) = api.get("/stats");
    assert_eq!(after["store_size"], 1);
    assert_eq!(after["runs"]["Accepted"], 1);

    let (status, err) = api.post(&format!("/runs/{id}/decision"), r#"{"decision":"accept"}"#);
    assert_eq!(status, 409, "{err}");
    let (status, _) = api.post(&format!("/runs/{id}/decision"), r#"{"decision":"reject"}"#);
    assert_eq!(status, 409);

    let (status, list) = api.get("/examples?level=simple&q=weekly");
    assert_eq!(status, 200);
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["level"], "Simple");
    let (_, none) = api.get("/examples?level=moderate");
    assert!(none.as_array().unwrap().is_empty());
    let (status, record) = api.get("/examples/1");
    assert_eq!(status, 200);
    assert_eq!(record["query"]["text"], "Weekly yield per product");
    assert!(record.get("embeddings").is_none());

    // The stored record carries a full embedding cache.
    let store = StoreHandle::load(dir.path().join("data/examples.jsonl"), common::DIM).unwrap();
    assert!(store.dirty().is_empty());
}

#[test]
fn invalid_requests_get_client_errors() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::new(spawn(service(config_in(dir.path(), ""), world_backend())));
    assert_eq!(api.post("/runs", "{").0, 400);
    assert_eq!(api.post("/runs", r#"{"text":"x"}"#).0, 400);
    assert_eq!(api.post("/runs", r#"{"query_text":"  "}"#).0, 400);
    assert_eq!(api.post("/runs", r#"{"query_text":"x","level":"epic"}"#).0, 400);
    assert_eq!(api.get("/runs/nope").0, 404);
    assert_eq!(api.post("/runs/nope/decision", r#"{"decision":"accept"}"#).0, 404);
    let id = api.start_run("Bin pareto by lot");
    api.poll_run(&id);
    assert_eq!(api.post(&format!("/runs/{id}/decision"), r#"{"decision":"maybe"}"#).0, 400);
    let empty = json!({"decision":"accept_edited","workflow":{"steps":[]}}).to_string();
    assert_eq!(api.post(&format!("/runs/{id}/decision"), &empty).0, 400);
    assert_eq!(api.get("/examples/999").0, 404);
    assert_eq!(api.get("/examples/abc").0, 400);
    assert_eq!(api.get("/examples?level=epic").0, 400);
    assert_eq!(api.get("/reports/unknown").0, 404);
    // The run is still open after the rejected payloads.
    assert_eq!(api.get(&format!("/runs/{id}")).1["status"], "AwaitingDecision");
}

#[test]
fn reject_and_edited_accept() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::new(spawn(service(config_in(dir.path(), ""), world_backend())));
    let a = api.start_run("Outlier dies on wafer edge");
    let b = api.start_run("Tester utilization per week");
    api.poll_run(&a);
    api.poll_run(&b);

    let (status, run) = api.post(&format!("/runs/{a}/decision"), r#"{"decision":"reject"}"#);
    assert_eq!((status, run["status"].as_str()), (200, Some("Rejected")));

    let edited = json!({"decision":"accept_edited","workflow":{"steps":[
        {"index":1,"task_description":"Load die results","step_description":"Read sort data"},
        {"index":2,"task_description":"Aggregate by tester","step_description":""}
    ]}});
    let (status, run) = api.post(&format!("/runs/{b}/decision"), &edited.to_string());
    assert_eq!(status, 200, "{run}");
    let (_, record) = api.get(&format!("/examples/{}", run["record_id"]));
    assert_eq!(record["workflow"], edited["workflow"]);
    let (_, stats) = api.get("/stats");
    assert_eq!(stats["store_size"], 1);
    assert_eq!(stats["rejected"], 1);
}

#[test]
fn restart_keeps_decided_runs_and_fails_open_ones() {
    let dir = tempfile::tempdir().unwrap();
    let (accepted, open) = {
        let api = Client::new(spawn(service(config_in(dir.path(), ""), world_backend())));
        let a = api.start_run("Lot hold rate by fab");
        let b = api.start_run("Retest recovery per bin");
        api.poll_run(&a);
        api.poll_run(&b);
        assert_eq!(api.post(&format!("/runs/{a}/decision"), r#"{"decision":"accept"}"#).0, 200);
        (a, b)
    };
    let api = Client::new(spawn(service(config_in(dir.path(), ""), world_backend())));
    let (_, a) = api.get(&format!("/runs/{accepted}"));
    assert_eq!(a["status"], "Accepted");
    let (_, b) = api.get(&format!("/runs/{open}"));
    assert_eq!(b["status"], "Failed");
    assert_eq!(b["failure"], LOST_RUN);
    assert_eq!(api.post(&format!("/runs/{open}/decision"), r#"{"decision":"accept"}"#).0, 409);
    assert_eq!(api.get("/stats").1["store_size"], 1);
}

#[test]
fn distill_job_produces_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let slices = "[[distill.slices]]\nname = \"initial\"\nthrough = 80\n[[distill.slices]]\nname = \"extended\"\n";
    let config = config_in(dir.path(), slices);
    {
        let mut store = config.open_store().unwrap();
        for r in distill_corpus(7) {
            store.append(r).unwrap();
        }
    }
    let api = Client::new(spawn(service(config, distill_backend())));
    let (status, created) = api.post("/distill", "");
    assert_eq!(status, 202);
    let id = created["report_id"].as_str().unwrap();
    let job = api.poll_report(id);
    assert_eq!(job["status"], "done", "{job}");
    let ratio = job["report"]["slices"][1]["new_function_ratio"]["Analysis"].as_f64().unwrap();
    assert!((ratio - 41.96).abs() < 0.01);

    let (_, stats) = api.get("/stats");
    assert_eq!(stats["category_counts"]["Analysis"], 311);
    assert_eq!(stats["category_counts"]["Data"], 387);
    let bars = stats["histogram"]["Output"].as_array().unwrap();
    let total: u64 = bars.iter().map(|b| b["new_per_slice"][0].as_u64().unwrap()).sum();
    assert_eq!(total, 37);
    assert!(dir.path().join("data/api_spec/analysis.md").exists());
    assert!(dir.path().join(format!("data/reports/{id}.json")).exists());
}
