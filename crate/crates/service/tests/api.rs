use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use olstwin::plant::EXAMPLE_PLANT;
use olstwin_service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(decision_wait: Duration) -> Router {
    router(AppState::new(ServiceConfig { data_dir: None, decision_wait }))
}

async fn call(app: &Router, method: Method, uri: &str, body: impl Into<Body>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn get(app: &Router, uri: &str) -> Value {
    let (s, v) = call(app, Method::GET, uri, Body::empty()).await;
    assert_eq!(s, StatusCode::OK, "{uri}: {v}");
    v
}

fn light_config() -> Value {
    json!({
        "records": 8,
        "design": { "randomized": { "seed": 7 } },
        "lm_iterations": 3,
        "polish_evaluations": 0,
        "sweep": { "from_db": 14.0, "to_db": 15.0, "step_db": 1.0 },
        "stability_samples": 3
    })
}

async fn create_plant(app: &Router) -> String {
    let (s, v) = call(app, Method::POST, "/plants", EXAMPLE_PLANT).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["plant_id"].as_str().unwrap().to_string()
}

async fn create_run(app: &Router, plant_id: &str) -> String {
    let body = json!({ "plant_id": plant_id, "config": light_config() }).to_string();
    let (s, v) = call(app, Method::POST, "/runs", body).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["run_id"].as_str().unwrap().to_string()
}

async fn wait_for(app: &Router, run_id: &str, done: impl Fn(&Value) -> bool) -> Value {
    for _ in 0..2000 {
        let v = get(app, &format!("/runs/{run_id}")).await;
        if done(&v) {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("run {run_id} did not reach the expected state");
}

fn state(v: &Value) -> &str {
    v["state"].as_str().unwrap()
}

async fn decide(app: &Router, run_id: &str, decision: &str) -> (StatusCode, Value) {
    let body = json!({ "decision": decision }).to_string();
    call(app, Method::POST, &format!("/runs/{run_id}/decision"), body).await
}

#[tokio::test(flavor = "multi_thread")]
async fn happy_path_adopts_and_finishes() {
    let app = app(Duration::from_secs(60));
    let plant = create_plant(&app).await;
    let run = create_run(&app, &plant).await;

    let v = wait_for(&app, &run, |v| state(v) == "AwaitDecision").await;
    assert_eq!(v["pending_decision"], true);
    let qot = get(&app, &format!("/runs/{run}/qot")).await;
    assert_eq!(qot["sweep"]["points"].as_array().unwrap().len(), 2);
    let profile = get(&app, &format!("/runs/{run}/profile")).await;
    assert!(profile["profile"].is_object());
    assert!(profile["extract"].is_object());

    let (s, v) = decide(&app, &run, "adopt").await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["pending_decision"], false);
    // Repeating the accepted decision changes nothing; the other one conflicts.
    assert_eq!(decide(&app, &run, "adopt").await.0, StatusCode::OK);
    assert_eq!(decide(&app, &run, "revert").await.0, StatusCode::CONFLICT);

    let v = wait_for(&app, &run, |v| state(v) == "Done").await;
    assert_eq!(v["decision"]["decision"], "adopt");
    assert_eq!(v["decision"]["decided_by"], "operator");
    assert!(v["error"].is_null());
    let t = get(&app, &format!("/runs/{run}/timeline")).await;
    assert_eq!(t["elapsed_min"], 60.0);
    let st = get(&app, &format!("/runs/{run}/stability")).await;
    assert_eq!(st["stability"]["channels"].as_array().unwrap().len(), 4);
}

#[tokio::test(flavor = "multi_thread")]
async fn two_concurrent_runs_on_distinct_plants_complete() {
    let app = app(Duration::from_secs(60));
    let (p1, p2) = (create_plant(&app).await, create_plant(&app).await);
    assert_ne!(p1, p2);
    let (r1, r2) = (create_run(&app, &p1).await, create_run(&app, &p2).await);
    for r in [&r1, &r2] {
        wait_for(&app, r, |v| state(v) == "AwaitDecision").await;
    }
    assert_eq!(decide(&app, &r1, "adopt").await.0, StatusCode::OK);
    assert_eq!(decide(&app, &r2, "revert").await.0, StatusCode::OK);
    let v1 = wait_for(&app, &r1, |v| state(v) == "Done").await;
    let v2 = wait_for(&app, &r2, |v| state(v) == "Done").await;
    assert_eq!(v1["decision"]["decision"], "adopt");
    assert_eq!(v2["decision"]["decision"], "revert");
    assert_eq!(v2["plant_id"], p2.as_str());
    let all = get(&app, "/runs").await;
    assert_eq!(all.as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn decision_on_a_finished_run_conflicts() {
    let app = app(Duration::from_millis(50));
    let plant = create_plant(&app).await;
    let run = create_run(&app, &plant).await;
    let v = wait_for(&app, &run, |v| state(v) == "Done").await;
    assert_eq!(v["decision"]["timed_out"], true);
    let (s, body) = decide(&app, &run, "adopt").await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let app = app(Duration::from_secs(1));
    let (s, _) = call(&app, Method::POST, "/plants", "name = 3").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, Method::POST, "/plants", vec![0xff, 0xfe]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, Method::POST, "/runs", "{not json").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, Method::POST, "/runs", json!({ "plant_id": "nope" }).to_string()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    for uri in ["/runs/nope", "/runs/nope/profile", "/runs/nope/qot", "/runs/nope/timeline", "/runs/nope/stability"] {
        let (s, _) = call(&app, Method::GET, uri, Body::empty()).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
    }
    assert_eq!(decide(&app, "nope", "adopt").await.0, StatusCode::NOT_FOUND);
    let plant = create_plant(&app).await;
    let run = create_run(&app, &plant).await;
    let (s, _) = call(&app, Method::POST, &format!("/runs/{run}/decision"), r#"{"decision":"maybe"}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn gets_are_side_effect_free() {
    let app = app(Duration::from_secs(1));
    let plant = create_plant(&app).await;
    let run = create_run(&app, &plant).await;
    let v = wait_for(&app, &run, |v| state(v) == "Done").await;
    let uri = format!("/runs/{run}/timeline");
    let a = get(&app, &uri).await;
    let b = get(&app, &uri).await;
    assert_eq!(a, b);
    assert_eq!(get(&app, &format!("/runs/{run}")).await, v);
}
