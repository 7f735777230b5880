mod common;

use std::collections::BTreeMap;

use axum::http::StatusCode;
use serde_json::{json, Value};

use common::*;
use feedloop_core::analytics::RankingRecord;
use feedloop_core::store::{read_records, RecordKind};
use feedloop_core::FeedbackRecord;

fn contains_any_tag(v: &Value) -> Option<String> {
    let s = v.to_string();
    METHODS.iter().find(|m| s.contains(*m)).map(|m| m.to_string())
}

async fn submit_ranks(app: &axum::Router, session: &str, ranks: [u32; 5]) -> (StatusCode, Value) {
    let item = current_item(app, session).await.unwrap();
    let id = item["item_id"].as_str().unwrap();
    let labels: Vec<&str> = item["summaries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["label"].as_str().unwrap())
        .collect();
    let ranks: BTreeMap<&str, u32> = labels.into_iter().zip(ranks).collect();
    post(app, &format!("/items/{id}/ranking"), json!({"session_id": session, "ranks": ranks})).await
}

#[tokio::test]
async fn ranking_views_never_reveal_methods() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 4);
    let app = app(dir.path());
    let (status, created) = post(&app, "/sessions", json!({"annotator_id": "e1", "mode": "ranking", "seed": 3})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(contains_any_tag(&created), None, "{created}");
    let session = created["session_id"].as_str().unwrap().to_string();
    for _ in 0..4 {
        let (_, next) = get(&app, &format!("/sessions/{session}/next")).await;
        assert_eq!(contains_any_tag(&next), None, "{next}");
        assert_eq!(next["item"]["summaries"].as_array().unwrap().len(), 5);
        let (status, receipt) = submit_ranks(&app, &session, [1, 2, 3, 4, 5]).await;
        assert_eq!(status, StatusCode::CREATED, "{receipt}");
        assert_eq!(contains_any_tag(&receipt), None, "{receipt}");
    }
    let (_, done) = get(&app, &format!("/sessions/{session}/next")).await;
    assert_eq!(done["done"], json!(true));
}

#[tokio::test]
async fn tied_ranks_are_stored_adjusted() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2);
    let app = app(dir.path());
    let session = open_session(&app, "e1", "ranking", 0).await;

    let (status, receipt) = submit_ranks(&app, &session, [1, 2, 2, 4, 5]).await;
    assert_eq!(status, StatusCode::CREATED, "{receipt}");
    let mut adjusted: Vec<f64> = receipt["adjusted_ranks"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_f64().unwrap())
        .collect();
    adjusted.sort_by(f64::total_cmp);
    assert_eq!(adjusted, vec![1.0, 2.5, 2.5, 4.0, 5.0]);

    let (status, receipt) = submit_ranks(&app, &session, [1, 1, 1, 1, 1]).await;
    assert_eq!(status, StatusCode::CREATED, "{receipt}");
    assert!(receipt["adjusted_ranks"].as_object().unwrap().values().all(|v| v == &json!(3.0)));

    let stored: Vec<RankingRecord> = read_records(&RecordKind::Rankings.path_in(dir.path())).unwrap();
    assert_eq!(stored.len(), 2);
    for r in &stored {
        assert!(r.violations().is_empty());
        let keys: Vec<&str> = r.raw_ranks.keys().map(String::as_str).collect();
        let mut want = METHODS.to_vec();
        want.sort();
        assert_eq!(keys, want);
    }
}

#[tokio::test]
async fn skipped_rank_is_rejected_and_item_stays_current() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2);
    let app = app(dir.path());
    let session = open_session(&app, "e1", "ranking", 0).await;
    let before = current_item(&app, &session).await.unwrap();

    let (status, err) = submit_ranks(&app, &session, [1, 2, 2, 3, 5]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], json!("invalid_ranking"));
    assert_eq!(current_item(&app, &session).await.unwrap(), before);
    assert!(read_records::<RankingRecord>(&RecordKind::Rankings.path_in(dir.path())).unwrap().is_empty());

    let id = before["item_id"].as_str().unwrap();
    let (status, err) = post(&app, &format!("/items/{id}/ranking"), json!({"session_id": session, "ranks": {"A": 1}})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], json!("missing_label"));
    let (status, err) = post(
        &app,
        &format!("/items/{id}/ranking"),
        json!({"session_id": session, "ranks": {"A": 1, "B": 2, "C": 3, "D": 4, "E": 5, "F": 6}}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], json!("unknown_label"));
}

#[tokio::test]
async fn ranking_needs_five_methods() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 1);
    let app = app(dir.path());
    let (status, err) = post(
        &app,
        "/sessions",
        json!({"annotator_id": "e1", "mode": "ranking", "methods": ["best_of_n", "random_of_n"]}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], json!("invalid_methods"));
    let (status, err) = post(&app, "/sessions", json!({"annotator_id": "e1", "mode": "grading"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], json!("unknown_mode"));
    let (status, err) = post(&app, "/sessions", json!({"mode": "ranking"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], json!("invalid_body"));
}

#[tokio::test]
async fn feedback_flow_and_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3);
    let app = app(dir.path());
    let session = open_session(&app, "a1", "feedback", 9).await;

    let item = current_item(&app, &session).await.unwrap();
    assert_eq!(item["mode"], json!("feedback"));
    let id = item["item_id"].as_str().unwrap().to_string();
    assert!(id.ends_with(":initial_summary"));

    let (status, err) = post(&app, &format!("/items/{id}/feedback"), json!({"session_id": session, "text": "  "})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], json!("empty_text"));

    let (status, rec) = post(&app, &format!("/items/{id}/feedback"), json!({"session_id": session, "text": "Mention the dog."})).await;
    assert_eq!(status, StatusCode::CREATED, "{rec}");
    assert_eq!(rec["feedback_id"], json!("fb-000001"));
    assert_eq!(rec["annotator_id"], json!("a1"));
    assert_eq!(rec["output_id"], json!(id));

    // The old item is no longer current for this session.
    let (status, err) = post(&app, &format!("/items/{id}/feedback"), json!({"session_id": session, "text": "again"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], json!("stale_item"));

    // A second session for the same annotator sees only the remaining items,
    // while one opened earlier still holds the answered item and hits the
    // duplicate check.
    let early = open_session(&app, "a2", "feedback", 9).await;
    let fresh = open_session(&app, "a1", "feedback", 9).await;
    let (_, view) = get(&app, &format!("/sessions/{fresh}")).await;
    assert_eq!(view["total"], json!(2));

    let (status, _) = get(&app, &format!("/feedback/{}", rec["feedback_id"].as_str().unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = get(&app, "/feedback/fb-999999").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let early_item = current_item(&app, &early).await.unwrap();
    let (status, _) = post(
        &app,
        &format!("/items/{}/feedback", early_item["item_id"].as_str().unwrap()),
        json!({"session_id": early, "text": "Shorter."}),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
}

#[tokio::test]
async fn duplicate_feedback_is_a_conflict() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2);
    let app = app(dir.path());
    let first = open_session(&app, "a1", "feedback", 1).await;
    let second = open_session(&app, "a1", "feedback", 1).await;
    let item = current_item(&app, &first).await.unwrap();
    assert_eq!(current_item(&app, &second).await.unwrap(), item);
    let id = item["item_id"].as_str().unwrap();
    let (status, _) = post(&app, &format!("/items/{id}/feedback"), json!({"session_id": first, "text": "x"})).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, err) = post(&app, &format!("/items/{id}/feedback"), json!({"session_id": second, "text": "y"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], json!("duplicate"));
    let stored: Vec<FeedbackRecord> = read_records(&RecordKind::Feedback.path_in(dir.path())).unwrap();
    assert_eq!(stored.len(), 1);
}

#[tokio::test]
async fn incorporation_flow() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3);
    let app = app(dir.path());

    // Only tasks with feedback on their initial summary are queued.
    let fb = open_session(&app, "a1", "feedback", 0).await;
    let item = current_item(&app, &fb).await.unwrap();
    let output_id = item["item_id"].as_str().unwrap().to_string();
    post(&app, &format!("/items/{output_id}/feedback"), json!({"session_id": fb, "text": "Say why."})).await;
    let task = output_id.split(':').next().unwrap().to_string();

    let session = open_session(&app, "j1", "incorporation", 0).await;
    let item = current_item(&app, &session).await.unwrap();
    assert_eq!(item["item_id"], json!(task));
    assert_eq!(item["feedback"], json!("Say why."));
    let candidates = item["candidates"].as_array().unwrap();
    assert_eq!(candidates.len(), 3);

    let judge = |m: &str, a: bool, b: bool, c: bool| {
        json!({"session_id": session, "method_tag": m, "at_least_one": a, "more_than_one": b, "all_points": c})
    };
    let uri = format!("/items/{task}/incorporation");
    let (status, err) = post(&app, &uri, judge("best_of_n", false, false, true)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");
    let (status, err) = post(&app, &uri, judge("human_summary", true, false, false)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], json!("unknown_method"));

    let (status, r) = post(&app, &uri, judge("best_of_n", true, true, true)).await;
    assert_eq!(status, StatusCode::CREATED, "{r}");
    assert_eq!(r["remaining"].as_array().unwrap().len(), 2);
    let (status, err) = post(&app, &uri, judge("best_of_n", true, false, false)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], json!("duplicate"));
    post(&app, &uri, judge("random_of_n", true, false, false)).await;
    let (_, r) = post(&app, &uri, judge("without_feedback", false, false, false)).await;
    assert_eq!(r["remaining"], json!([]));
    assert_eq!(r["position"], json!(1));

    let (_, next) = get(&app, &format!("/sessions/{session}/next")).await;
    assert_eq!(next["done"], json!(true));
    let lines = std::fs::read_to_string(RecordKind::Judgments.path_in(dir.path())).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[tokio::test]
async fn wrong_mode_and_unknown_session() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 1);
    let app = app(dir.path());
    let session = open_session(&app, "e1", "ranking", 0).await;
    let (status, err) = post(&app, "/items/post-000/feedback", json!({"session_id": session, "text": "x"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], json!("wrong_mode"));
    let (status, err) = get(&app, "/sessions/nope/next").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], json!("unknown_session"));
}

/// Walks a fresh ranking session to the end, checking that `next` does not
/// move the cursor.
async fn walk(seed: u64) -> Vec<Value> {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 12);
    let app = app(dir.path());
    let session = open_session(&app, "e1", "ranking", seed).await;
    let mut items = Vec::new();
    while let Some(item) = current_item(&app, &session).await {
        assert_eq!(current_item(&app, &session).await.unwrap(), item);
        items.push(item);
        let (status, _) = submit_ranks(&app, &session, [5, 4, 3, 2, 1]).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let (_, done) = get(&app, &format!("/sessions/{session}/next")).await;
    assert_eq!(done["done"], json!(true));
    assert_eq!(done["position"], json!(12));
    items
}

#[tokio::test]
async fn next_is_idempotent_and_queues_are_seeded() {
    let a = walk(5).await;
    assert_eq!(a.len(), 12);
    assert_eq!(a, walk(5).await, "same seed gives the same queue and labels");
    let order = |v: &[Value]| v.iter().map(|i| i["item_id"].clone()).collect::<Vec<_>>();
    assert_ne!(order(&a), order(&walk(6).await));
}

#[tokio::test]
async fn unknown_export_kind_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 1);
    let app = app(dir.path());
    let (status, err) = get(&app, "/export/widgets").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], json!("unknown_kind"));
    let (status, body) = call_raw(&app, axum::http::Method::GET, "/export/rankings", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn export_is_a_consistent_prefix_under_concurrent_writes() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 30);
    let app = app(dir.path());

    let writers: Vec<_> = (0..6)
        .map(|w| {
            let app = app.clone();
            tokio::spawn(async move {
                let session = open_session(&app, &format!("a{w}"), "feedback", w).await;
                let mut n = 0;
                while let Some(item) = current_item(&app, &session).await {
                    let id = item["item_id"].as_str().unwrap();
                    let (status, _) = post(
                        &app,
                        &format!("/items/{id}/feedback"),
                        json!({"session_id": session, "text": format!("note {w} {n} {}", "x".repeat(500))}),
                    )
                    .await;
                    assert_eq!(status, StatusCode::CREATED);
                    n += 1;
                }
                n
            })
        })
        .collect();
    let reader = {
        let app = app.clone();
        tokio::spawn(async move {
            let mut snapshots = Vec::new();
            for _ in 0..60 {
                let (status, body) = call_raw(&app, axum::http::Method::GET, "/export/feedback", None).await;
                assert_eq!(status, StatusCode::OK);
                snapshots.push(body);
                tokio::task::yield_now().await;
            }
            snapshots
        })
    };
    let mut written = 0;
    for w in writers {
        written += w.await.unwrap();
    }
    let snapshots = reader.await.unwrap();
    assert_eq!(written, 180);

    let (_, full) = call_raw(&app, axum::http::Method::GET, "/export/feedback", None).await;
    let records: Vec<FeedbackRecord> = std::str::from_utf8(&full)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 180);
    let mut ids: Vec<&str> = records.iter().map(|r| r.feedback_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 180);
    for snap in snapshots {
        assert!(full.starts_with(&snap), "snapshot is not a prefix");
        assert!(snap.is_empty() || snap.ends_with(b"\n"));
        for line in std::str::from_utf8(&snap).unwrap().lines() {
            serde_json::from_str::<FeedbackRecord>(line).unwrap();
        }
    }
}

#[tokio::test]
async fn annotations_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2);
    {
        let app = app(dir.path());
        let session = open_session(&app, "e1", "ranking", 0).await;
        submit_ranks(&app, &session, [1, 2, 3, 4, 5]).await;
        let fb = open_session(&app, "a1", "feedback", 0).await;
        let item = current_item(&app, &fb).await.unwrap();
        post(&app, &format!("/items/{}/feedback", item["item_id"].as_str().unwrap()), json!({"session_id": fb, "text": "x"})).await;
    }
    let app = app(dir.path());
    let session = open_session(&app, "e1", "ranking", 0).await;
    let (_, view) = get(&app, &format!("/sessions/{session}")).await;
    assert_eq!(view["total"], json!(1));
    let fb = open_session(&app, "a1", "feedback", 0).await;
    let item = current_item(&app, &fb).await.unwrap();
    let (_, rec) = post(&app, &format!("/items/{}/feedback", item["item_id"].as_str().unwrap()), json!({"session_id": fb, "text": "y"})).await;
    assert_eq!(rec["feedback_id"], json!("fb-000002"));
}
