#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use feedloop_core::store::{write_records, RecordKind};
use feedloop_core::{DecodingParams, GeneratedOutput, Producer, TaskInput, Timestamp};
use feedloop_service::{router, AppState, Store};

pub const METHODS: [&str; 5] = ["best_of_n", "random_of_n", "without_feedback", "human_summary", "initial_summary"];

pub fn task_id(i: usize) -> String {
    format!("post-{i:03}")
}

pub fn output(task: &str, method: &str, text: &str) -> GeneratedOutput {
    let human = method == "human_summary";
    GeneratedOutput {
        output_id: format!("{task}:{method}"),
        task_id: task.to_string(),
        text: text.to_string(),
        producer: if human { Producer::Human } else { Producer::Model },
        model_tag: (!human).then(|| "mock".to_string()),
        method_tag: Some(method.to_string()),
        decoding: (!human).then(DecodingParams::summarization),
        created_at: Timestamp::from_unix(1_600_000_000),
        quality_flags: vec![],
    }
}

/// A corpus of `n` posts, each with a text for every ranked method.
pub fn write_corpus(dir: &Path, n: usize) {
    let tasks: Vec<TaskInput> = (0..n)
        .map(|i| TaskInput {
            task_id: task_id(i),
            title: format!("Title {i}"),
            body: format!("Body of post {i}."),
            source_tag: "test".into(),
        })
        .collect();
    let outputs: Vec<GeneratedOutput> = tasks
        .iter()
        .flat_map(|t| {
            METHODS
                .iter()
                .enumerate()
                .map(|(k, m)| output(&t.task_id, m, &format!("Summary {k} of {}.", t.task_id)))
        })
        .collect();
    write_records(&RecordKind::Tasks.path_in(dir), &tasks).unwrap();
    write_records(&RecordKind::Outputs.path_in(dir), &outputs).unwrap();
}

pub fn app(dir: &Path) -> Router {
    router(AppState::new(Store::open(dir).unwrap()), None)
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body).await;
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into_owned()))
    };
    (status, value)
}

pub async fn call_raw(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

pub async fn open_session(app: &Router, annotator: &str, mode: &str, seed: u64) -> String {
    let (status, v) = post(app, "/sessions", serde_json::json!({"annotator_id": annotator, "mode": mode, "seed": seed})).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

pub async fn current_item(app: &Router, session: &str) -> Option<Value> {
    let (status, v) = get(app, &format!("/sessions/{session}/next")).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v.get("item").cloned()
}
