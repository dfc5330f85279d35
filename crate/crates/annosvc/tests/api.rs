use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vidqg_annosvc::{router, AnnotationStore, AppState, BatchView};
use vidqg_core::agreement::{
    agreement_report, read_annotations_csv, BatchItem, BatchVideo, EvaluationBatch, MetricLevel, SampleSpec,
};
use vidqg_core::corpus::Source;
use vidqg_core::harness::PromptMode;
use vidqg_core::textproc::OutputClass;

fn batch(n: usize) -> EvaluationBatch {
    let transcript = (1..=12).map(|i| format!("Sentence number {i}.")).collect::<Vec<_>>().join(" ");
    EvaluationBatch {
        seed: 7,
        spec: SampleSpec::default(),
        videos: vec![BatchVideo {
            id: "v1".into(),
            source: Source::Khan,
            domain: Some("math".into()),
            transcript,
        }],
        items: (0..n)
            .map(|i| BatchItem {
                item_id: format!("v1:model{i}:m1"),
                video_id: "v1".into(),
                model: format!("model{i}"),
                mode: PromptMode::M1,
                iteration: 1,
                question: format!("What is item {i}?"),
                output_class: OutputClass::Question,
            })
            .collect(),
    }
}

fn app(dir: &tempfile::TempDir, n: usize) -> Router {
    let store = AnnotationStore::open(dir.path().join("annotations.csv")).unwrap();
    router(Arc::new(AppState::new(batch(n), store, 10)), &["http://localhost:5173".into()])
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body).await;
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

async fn call_raw(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, bytes.to_vec())
}

fn submission(rater: &str, item: usize, rel: bool, ans: bool, bloom: &str) -> Value {
    json!({"rater_id": rater, "item_id": format!("v1:model{item}:m1"), "relevance": rel, "answerability": ans, "bloom": bloom})
}

#[tokio::test]
async fn batch_and_item_views() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, 2);
    let (status, body) = call(&app, "GET", "/api/batch", None).await;
    assert_eq!(status, StatusCode::OK);
    let view: BatchView = serde_json::from_value(body).unwrap();
    assert_eq!(view.items.len(), 2);
    assert_eq!(view.items[0].question, "What is item 0?");
    assert!(view.items[0].transcript_excerpt.ends_with("Sentence number 10."));

    let (status, body) = call(&app, "GET", "/api/items/v1:model1:m1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["model"], "model1");
    assert_eq!(call(&app, "GET", "/api/items/nope", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn submissions_upsert_and_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, 2);
    let first = submission("ana", 0, true, false, "understand");
    assert_eq!(call(&app, "POST", "/api/annotations", Some(first.clone())).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, "POST", "/api/annotations", Some(first)).await.0, StatusCode::NO_CONTENT);
    let revised = submission("ana", 0, true, true, "apply");
    assert_eq!(call(&app, "POST", "/api/annotations", Some(revised)).await.0, StatusCode::NO_CONTENT);

    let (_, list) = call(&app, "GET", "/api/annotations?rater_id=ana", None).await;
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), 1);
    assert_eq!(list[0]["bloom"], "apply");
    assert_eq!(list[0]["answerability"], true);

    let (_, item) = call(&app, "GET", "/api/items/v1:model0:m1", None).await;
    assert_eq!(item["progress"]["ana"], json!({"completed": 1, "total": 2}));

    let unknown = submission("ana", 9, true, true, "apply");
    assert_eq!(call(&app, "POST", "/api/annotations", Some(unknown)).await.0, StatusCode::NOT_FOUND);
    let bad_bloom = submission("ana", 0, true, true, "memorize");
    assert!(call(&app, "POST", "/api/annotations", Some(bad_bloom)).await.0.is_client_error());
}

#[tokio::test]
async fn agreement_matches_offline_csv() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, 6);
    let blooms = ["remember", "understand", "apply", "analyze", "evaluate", "create"];
    for (i, level) in blooms.iter().enumerate() {
        for rater in ["ana", "ben"] {
            let rel = rater == "ana" || i % 2 == 0;
            let bloom = if rater == "ben" && i == 5 { "non" } else { level };
            let body = submission(rater, i, rel, i != 3, bloom);
            assert_eq!(call(&app, "POST", "/api/annotations", Some(body)).await.0, StatusCode::NO_CONTENT);
        }
    }
    // Revision of one item must leave one stored record for that pair.
    let body = submission("ben", 5, true, true, "create");
    assert_eq!(call(&app, "POST", "/api/annotations", Some(body)).await.0, StatusCode::NO_CONTENT);

    let (_, served) = call_raw(&app, "GET", "/api/agreement", None).await;
    // The log keeps every submission; replaying it last-wins gives the
    // current annotations.
    let log = read_annotations_csv(&dir.path().join("annotations.csv")).unwrap();
    assert_eq!(log.len(), 13);
    let mut latest = std::collections::BTreeMap::new();
    for a in log {
        latest.insert((a.rater_id.clone(), a.item_id.clone()), a);
    }
    let current: Vec<_> = latest.into_values().collect();
    assert_eq!(current.len(), 12);
    let expected = serde_json::to_vec(&agreement_report(&current, MetricLevel::Nominal)).unwrap();
    assert_eq!(served, expected);
    let served: Value = serde_json::from_slice(&served).unwrap();
    assert_eq!(served["bloom"], 1.0);
    assert_eq!(served["answerability"], 1.0);
}

#[tokio::test]
async fn perfect_agreement_gives_unit_alphas() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, 4);
    for i in 0..4 {
        for rater in ["ana", "ben"] {
            let body = submission(rater, i, i % 2 == 0, i < 2, ["apply", "create"][i % 2]);
            call(&app, "POST", "/api/annotations", Some(body)).await;
        }
    }
    let (_, served) = call(&app, "GET", "/api/agreement", None).await;
    assert_eq!(served, json!({"relevance": 1.0, "answerability": 1.0, "bloom": 1.0}));
}

#[tokio::test]
async fn store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let app = app(&dir, 2);
        call(&app, "POST", "/api/annotations", Some(submission("ana", 1, false, false, "non"))).await;
    }
    let app = app(&dir, 2);
    let (_, list) = call(&app, "GET", "/api/annotations", None).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["item_id"], "v1:model1:m1");
}

#[tokio::test]
async fn cors_allows_configured_origin() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, 1);
    let req = Request::builder()
        .uri("/api/batch")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://localhost:5173");
}
