use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use oralscan_core::model::{ArchConfig, DecodeConfig, ModelParams};
use oralscan_core::{ConditionKind, ConfidenceLevel, OperatingPointTable, OralImage, QuestionnaireSchema};
use oralscan_service::{router, AppState, ExamReport, MaskResponse, Models, ServiceConfig, SessionStore, SuggestionCatalog};
use serde_json::{json, Value};
use tower::ServiceExt;

fn models(table: OperatingPointTable, with_model: bool) -> Models {
    let schema = QuestionnaireSchema::default();
    let base = ModelParams::init(&ArchConfig::default(), &schema, 5).unwrap();
    let enh = base.to_enhanced(&schema);
    Models {
        baseline: with_model.then(|| Arc::new(base)),
        enhanced: with_model.then(|| Arc::new(enh)),
        table,
        decode: DecodeConfig::default(),
    }
}

fn state(dir: &std::path::Path, table: OperatingPointTable) -> AppState {
    AppState::new(
        SessionStore::open(dir).unwrap(),
        models(table, true),
        SuggestionCatalog::default(),
        ServiceConfig::default(),
    )
    .unwrap()
}

async fn call(state: &AppState, method: Method, uri: &str, body: Body) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(body).unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(state: &AppState, method: Method, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn png(size: usize) -> Vec<u8> {
    let mut img = OralImage::filled(size, size, [0.8, 0.45, 0.45]);
    img.pixels[[3, 4, 1]] = 0.9;
    img.quantize();
    img.encode_png().unwrap()
}

async fn new_session(state: &AppState) -> String {
    let (status, v) = call_json(state, Method::POST, "/sessions", Value::Null).await;
    assert_eq!(status, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

async fn upload(state: &AppState, id: &str, query: &str) -> String {
    let (status, body) = call(
        state,
        Method::POST,
        &format!("/sessions/{id}/images{query}"),
        Body::from(png(96)),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));
    let v: Value = serde_json::from_slice(&body).unwrap();
    v["image_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn full_flow_and_idempotent_analyze() {
    let dir = tempfile::tempdir().unwrap();
    // t1 = t2 = 0: every condition is at least likely
    let st = state(dir.path(), OperatingPointTable::uniform(0.0, 0.0).unwrap());
    let id = new_session(&st).await;
    let (s, _) = call_json(&st, Method::PUT, &format!("/sessions/{id}/questionnaire"), json!({"answers": [0, 1, 2, 0, 1, 2, 3]})).await;
    assert_eq!(s, StatusCode::OK);
    let iid = upload(&st, &id, "?solid=0.1,0.1,0.9,0.9&dashed=0.05,0.05,0.95,0.95").await;
    let (s, _) = call_json(
        &st,
        Method::POST,
        &format!("/sessions/{id}/images/{iid}/annotations"),
        json!({"strokes": [{"kind": "bleeding", "points": [[0.2, 0.2], [0.4, 0.2]]}]}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);

    let (s1, first) = call(&st, Method::POST, &format!("/sessions/{id}/analyze"), Body::empty()).await;
    assert_eq!(s1, StatusCode::OK, "{}", String::from_utf8_lossy(&first));
    let (s2, second) = call(&st, Method::POST, &format!("/sessions/{id}/analyze"), Body::empty()).await;
    assert_eq!(s2, StatusCode::OK);
    assert_eq!(first, second);
    let (s3, fetched) = call(&st, Method::GET, &format!("/sessions/{id}/report"), Body::empty()).await;
    assert_eq!(s3, StatusCode::OK);
    assert_eq!(first, fetched);

    let report: ExamReport = serde_json::from_slice(&first).unwrap();
    let reparsed: ExamReport = serde_json::from_slice(&serde_json::to_vec(&report).unwrap()).unwrap();
    assert_eq!(report, reparsed);
    assert_eq!(report.images.len(), 1);
    assert_eq!(report.images[0].model_variant, oralscan_core::model::Variant::Enhanced);
    for c in &report.images[0].conditions {
        assert!(c.level >= ConfidenceLevel::Likely);
        assert!(!c.suggestions.is_empty());
        if c.condition.is_localized() {
            assert!(c.heatmap.is_none());
            assert!(!c.boxes.as_ref().unwrap().is_empty());
        } else {
            assert!(c.boxes.is_none());
            let h = c.heatmap.as_ref().unwrap();
            let (s, bytes) = call(&st, Method::GET, &h.url, Body::empty()).await;
            assert_eq!(s, StatusCode::OK);
            let img = image::load_from_memory(&bytes).unwrap();
            assert_eq!(img.width(), 64);
            let (s, _) = call(&st, Method::GET, &h.sidecar_url, Body::empty()).await;
            assert_eq!(s, StatusCode::OK);
        }
    }

    // analyzed sessions are closed for mutation
    let (s, _) = call(&st, Method::POST, &format!("/sessions/{id}/images"), Body::from(png(8))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    // a fresh service over the same directory serves the same bytes
    let restarted = state(dir.path(), OperatingPointTable::uniform(0.0, 0.0).unwrap());
    let (s, again) = call(&restarted, Method::GET, &format!("/sessions/{id}/report"), Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(again, first);
}

#[tokio::test]
async fn levels_follow_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path(), OperatingPointTable::uniform(1.0, 1.0).unwrap());
    let id = new_session(&st).await;
    upload(&st, &id, "").await;
    let (s, body) = call(&st, Method::POST, &format!("/sessions/{id}/analyze"), Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    let report: ExamReport = serde_json::from_slice(&body).unwrap();
    // no questionnaire: baseline model
    assert_eq!(report.images[0].model_variant, oralscan_core::model::Variant::Baseline);
    for c in &report.images[0].conditions {
        assert_eq!(c.level, ConfidenceLevel::Unlikely);
        assert!(c.heatmap.is_none());
        assert!(c.suggestions.is_empty());
        assert_eq!(c.boxes.as_ref().map(|b| b.is_empty()), c.condition.is_localized().then_some(true));
    }
}

#[tokio::test]
async fn questionnaire_errors_name_the_question() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path(), OperatingPointTable::uniform(0.5, 0.3).unwrap());
    let id = new_session(&st).await;
    let (s, v) = call_json(&st, Method::PUT, &format!("/sessions/{id}/questionnaire"), json!({"answers": [0, 1, 9]})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["category"], "validation");
    assert!(v["field"].as_str().unwrap().starts_with("question 3"));
    // partial answers are fine
    let (s, v) = call_json(&st, Method::PUT, &format!("/sessions/{id}/questionnaire"), json!({"answers": [0, null, 1]})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["answers"].as_array().unwrap().len(), 7);
}

#[tokio::test]
async fn strokes_rasterize_along_the_polyline() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path(), OperatingPointTable::uniform(0.5, 0.3).unwrap());
    let id = new_session(&st).await;
    let iid = upload(&st, &id, "").await;
    let uri = format!("/sessions/{id}/images/{iid}/annotations");

    let (s, v) = call_json(&st, Method::POST, &uri, json!({"strokes": []})).await;
    assert_eq!(s, StatusCode::OK);
    let m: MaskResponse = serde_json::from_value(v).unwrap();
    assert!(m.pain.iter().flatten().chain(m.bleeding.iter().flatten()).all(|&v| v == 0));

    let pts = [[0.2, 0.3], [0.5, 0.3], [0.5, 0.7]];
    let (s, v) = call_json(&st, Method::POST, &uri, json!({"strokes": [{"kind": "pain", "points": pts}]})).await;
    assert_eq!(s, StatusCode::OK);
    let m: MaskResponse = serde_json::from_value(v).unwrap();
    // oracle: pixel centers within 1.5 px of either segment, in 64-px units
    let seg = |p: (f64, f64), a: [f64; 2], b: [f64; 2]| -> f64 {
        let (ax, ay, bx, by) = (a[0] * 64.0, a[1] * 64.0, b[0] * 64.0, b[1] * 64.0);
        let (dx, dy) = (bx - ax, by - ay);
        let t = (((p.0 - ax) * dx + (p.1 - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
        ((p.0 - ax - t * dx).powi(2) + (p.1 - ay - t * dy).powi(2)).sqrt()
    };
    for r in 0..64 {
        for c in 0..64 {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let near = seg(p, pts[0], pts[1]) <= 1.5 || seg(p, pts[1], pts[2]) <= 1.5;
            assert_eq!(m.pain[r][c] == 1, near, "pixel ({r}, {c})");
            assert_eq!(m.bleeding[r][c], 0);
        }
    }
    let (s, _) = call(&st, Method::GET, &m.mask_url, Body::empty()).await;
    assert_eq!(s, StatusCode::OK);

    let (s, _) = call_json(&st, Method::POST, &uri, json!({"strokes": [{"kind": "pain", "points": [[1.5, 0.0]]}]})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path(), OperatingPointTable::uniform(0.5, 0.3).unwrap());
    let (s, _) = call(&st, Method::GET, "/sessions/nope/report", Body::empty()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let id = new_session(&st).await;
    let (s, _) = call(&st, Method::GET, &format!("/sessions/{id}/report"), Body::empty()).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, v) = call_json(&st, Method::POST, &format!("/sessions/{id}/analyze"), Value::Null).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["category"], "precondition");
    let (s, _) = call(&st, Method::POST, &format!("/sessions/{id}/images/img-9/annotations"), Body::from("{\"strokes\":[]}")).await;
    assert!(s == StatusCode::NOT_FOUND || s == StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (s, _) = call_json(&st, Method::POST, &format!("/sessions/{id}/images/img-9/annotations"), json!({"strokes": []})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&st, Method::POST, &format!("/sessions/{id}/images?solid=0.5,0.5,0.2,0.9"), Body::from(png(16))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&st, Method::POST, &format!("/sessions/{id}/images"), Body::from("not an image")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&st, Method::GET, &format!("/sessions/{id}/artifacts/..%2Fevents.jsonl"), Body::empty()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn missing_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let st = AppState::new(
        SessionStore::open(dir.path()).unwrap(),
        models(OperatingPointTable::uniform(0.5, 0.3).unwrap(), false),
        SuggestionCatalog::default(),
        ServiceConfig::default(),
    )
    .unwrap();
    let id = new_session(&st).await;
    upload(&st, &id, "").await;
    let (s, v) = call_json(&st, Method::POST, &format!("/sessions/{id}/analyze"), Value::Null).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["category"], "config");
}

#[tokio::test]
async fn concurrent_mutation_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path(), OperatingPointTable::uniform(0.5, 0.3).unwrap());
    let id = new_session(&st).await;
    let guard = st.lock_session(&id).unwrap();
    let (s, v) = call_json(&st, Method::PUT, &format!("/sessions/{id}/questionnaire"), json!({"answers": [0]})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["category"], "conflict");
    drop(guard);
    let (s, _) = call_json(&st, Method::PUT, &format!("/sessions/{id}/questionnaire"), json!({"answers": [0]})).await;
    assert_eq!(s, StatusCode::OK);
    // other sessions are unaffected by a held lock
    let other = new_session(&st).await;
    let _g = st.lock_session(&id).unwrap();
    let (s, _) = call_json(&st, Method::PUT, &format!("/sessions/{other}/questionnaire"), json!({"answers": [1]})).await;
    assert_eq!(s, StatusCode::OK);
    let _ = ConditionKind::ALL;
}
