use std::sync::{Arc, RwLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use errspan_cli::http::{router, SharedService};
use errspan_cli::qualification::AnswerKey;
use errspan_cli::service::{AnnotationService, ServiceSettings};
use errspan_cli::store::{JsonlStore, MemoryStore, Store};
use errspan_core::GenerationRecord;

fn generations() -> Vec<GenerationRecord> {
    ["It rained. It rained again.", "The dog barked at the moon."]
        .iter()
        .enumerate()
        .map(|(i, t)| GenerationRecord::new(format!("g{i}"), "Prompt.", *t, "m", None))
        .collect()
}

fn shared(store: Box<dyn Store>) -> SharedService {
    Arc::new(RwLock::new(AnnotationService::new(store, ServiceSettings::default())))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn parse(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn qualify(app: &axum::Router, annotator: &str) -> Value {
    let response = AnswerKey::bundled().perfect_response(annotator);
    let (status, body) = call(app, "POST", "/api/qualification", Some(serde_json::to_value(response).unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    parse(&body)
}

fn annotation(id: &str, generation: &str, annotator: &str, spans: Value) -> Value {
    json!({
        "annotation_id": id,
        "generation_id": generation,
        "annotator_id": annotator,
        "duration_seconds": 30.0,
        "spans": spans,
    })
}

fn redundant_span() -> Value {
    json!([{
        "start": 11, "end": 26, "error_type": "Redundant", "severity": 2,
        "explanation": "says it twice", "antecedent": {"start": 0, "end": 9}
    }])
}

#[tokio::test]
async fn full_task_flow() {
    let app = router(shared(Box::new(MemoryStore::new(generations()))));

    let (status, _) = call(&app, "GET", "/api/tasks/next?annotator_id=w1", None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);

    let grade = qualify(&app, "w1").await;
    assert_eq!(grade["score"], 100);
    assert_eq!(grade["pass"], true);

    let (status, body) = call(&app, "GET", "/api/tasks/next?annotator_id=w1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse(&body)["generation_id"], "g0");

    let ann = annotation("a1", "g0", "w1", redundant_span());
    let (status, body) = call(&app, "POST", "/api/annotations", Some(ann.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(parse(&body), json!({"annotation_id": "a1"}));

    let (status, _) = call(&app, "POST", "/api/annotations", Some(ann)).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, body) = call(&app, "GET", "/api/generations/g0/annotations", None).await;
    assert_eq!(status, StatusCode::OK);
    let list = parse(&body);
    assert_eq!(list[0]["spans"], redundant_span());

    let (status, body) = call(&app, "GET", "/api/tasks/next?annotator_id=w1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse(&body)["generation_id"], "g1");
    let ann = annotation("a2", "g1", "w1", json!([]));
    assert_eq!(call(&app, "POST", "/api/annotations", Some(ann)).await.0, StatusCode::CREATED);

    let (status, body) = call(&app, "GET", "/api/tasks/next?annotator_id=w1", None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert!(body.is_empty());
}

#[tokio::test]
async fn invariant_violations_are_listed() {
    let app = router(shared(Box::new(MemoryStore::new(generations()))));
    qualify(&app, "w1").await;
    call(&app, "GET", "/api/tasks/next?annotator_id=w1", None).await;
    let spans = json!([{
        "start": 11, "end": 26, "error_type": "Incoherent", "severity": 2,
        "explanation": "odd", "antecedent": {"start": 0, "end": 9}
    }]);
    let (status, body) = call(&app, "POST", "/api/annotations", Some(annotation("a1", "g0", "w1", spans))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let v = parse(&body);
    assert_eq!(v["violations"][0]["kind"], "AntecedentNotSupported", "{v}");

    // unassigned generation
    let (status, _) = call(&app, "POST", "/api/annotations", Some(annotation("a2", "g1", "w1", json!([])))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn lookups_and_reports() {
    let app = router(shared(Box::new(MemoryStore::new(generations()))));
    let (status, body) = call(&app, "GET", "/api/generations/g1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse(&body)["generation"], "The dog barked at the moon.");
    assert_eq!(call(&app, "GET", "/api/generations/nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/generations/nope/annotations", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/reports/nope", None).await.0, StatusCode::NOT_FOUND);

    qualify(&app, "w1").await;
    call(&app, "GET", "/api/tasks/next?annotator_id=w1", None).await;
    call(&app, "POST", "/api/annotations", Some(annotation("a1", "g0", "w1", redundant_span()))).await;

    for uri in [
        "/api/reports/validation",
        "/api/reports/metrics?weighting=count&group_by=all&format=csv&resamples=0",
        "/api/reports/agreement?format=csv",
        "/api/reports/bootstrap?n_generations=2&resamples=10",
        "/api/reports/heatmap",
        "/api/reports/lengths",
        "/api/reports/overlay?generation_id=g0",
        "/api/generations/g0/annotations",
    ] {
        let (status, first) = call(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::OK, "{uri}: {}", String::from_utf8_lossy(&first));
        let (_, second) = call(&app, "GET", uri, None).await;
        assert_eq!(first, second, "{uri}");
    }
    let (_, csv) = call(&app, "GET", "/api/reports/metrics?weighting=count&group_by=all&format=csv&resamples=0", None).await;
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.contains("all,Redundant,count,1.000000"), "{csv}");

    assert_eq!(call(&app, "GET", "/api/reports/overlay", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "GET", "/api/reports/lengths?format=csv", None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn malformed_qualification_is_rejected() {
    let app = router(shared(Box::new(MemoryStore::new(generations()))));
    let mut response = serde_json::to_value(AnswerKey::bundled().perfect_response("w1")).unwrap();
    response["mcq_answers"].as_array_mut().unwrap().pop();
    let (status, _) = call(&app, "POST", "/api/qualification", Some(response)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "GET", "/api/tasks/next?annotator_id=w1", None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn state_survives_a_new_service_over_the_same_files() {
    let dir = tempfile::tempdir().unwrap();
    let open = || shared(Box::new(JsonlStore::open(dir.path(), generations()).unwrap()));

    let app = router(open());
    qualify(&app, "w1").await;
    call(&app, "GET", "/api/tasks/next?annotator_id=w1", None).await;
    call(&app, "POST", "/api/annotations", Some(annotation("a1", "g0", "w1", redundant_span()))).await;
    let (_, before) = call(&app, "GET", "/api/generations/g0/annotations", None).await;
    drop(app);

    let app = router(open());
    let (_, after) = call(&app, "GET", "/api/generations/g0/annotations", None).await;
    assert_eq!(before, after);
    let (status, body) = call(&app, "GET", "/api/tasks/next?annotator_id=w1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse(&body)["generation_id"], "g1");
}
