use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use foramslice_core::labels::SPECIES;
use foramslice_core::matcher::{build_corpus_index, IndexParams};
use foramslice_core::phantom::{generate, standard_corpus};
use foramslice_core::volume_io::extract_slice;
use foramslice_core::{CorpusIndex, SliceImage, Volume};
use foramslice_service::api::{ClassifyResponse, PreprocessResponse, VolumesResponse};
use foramslice_service::{empty_index, router, AppState, ErrorBody, JobHandle, JobState, ProviderSpec, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    volumes: Vec<Volume>,
    index: CorpusIndex,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let volumes: Vec<Volume> = standard_corpus()
            .into_iter()
            .map(|s| generate(&s.with_dims([64, 64, 32])))
            .collect();
        let mut params = IndexParams::default();
        params.preprocess.target_size = 48;
        params.orb_frame_size = 96;
        let index = build_corpus_index(&volumes, &params).unwrap();
        Fixture { volumes, index }
    })
}

fn stub(id: &str, probs: Option<Vec<f64>>) -> ProviderSpec {
    ProviderSpec::Stub { id: id.into(), probs }
}

fn app_with(config: ServiceConfig, index: Option<CorpusIndex>) -> (Arc<AppState>, Router) {
    let state = AppState::new(config).unwrap();
    if let Some(i) = index {
        state.set_index(i);
    }
    (state.clone(), router(state))
}

fn app() -> Router {
    app_with(ServiceConfig::default(), Some(fixture().index.clone())).1
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, headers, body.to_vec())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn post_bytes(uri: &str, bytes: Vec<u8>) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "image/png")
        .body(Body::from(bytes))
        .unwrap()
}

fn error_body(bytes: &[u8]) -> ErrorBody {
    let e: ErrorBody = serde_json::from_slice(bytes).expect("error body has code, message and hint");
    assert!(!e.code.is_empty() && !e.message.is_empty() && !e.hint.is_empty());
    e
}

/// A kept slice of volume `vid` as PNG bytes, with its record index.
fn slice_png(vid: &str) -> (Vec<u8>, usize) {
    let f = fixture();
    let (i, r) = f
        .index
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.volume_id == vid)
        .nth(8)
        .unwrap();
    let vol = f.volumes.iter().find(|v| v.specimen_id == vid).unwrap();
    (extract_slice(vol, r.axis, r.index).unwrap().encode_png().unwrap(), i)
}

fn corpus_query() -> String {
    let p = &fixture().index.params.preprocess;
    format!(
        "/api/preprocess?sensitivity={}&content_min_fraction={}&target_size={}&denoise_radius={}&crop_margin={}",
        p.sensitivity, p.content_min_fraction, p.target_size, p.denoise_radius, p.crop_margin
    )
}

async fn upload(app: &Router, uri: &str, png: Vec<u8>) -> PreprocessResponse {
    let (status, _, body) = send(app, post_bytes(uri, png)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

async fn wait_for(app: &Router, job_id: &str) -> JobHandle {
    let mut last_progress = 0.0;
    for _ in 0..1200 {
        let (status, _, body) = send(app, get(&format!("/api/match/{job_id}"))).await;
        assert_eq!(status, StatusCode::OK);
        let h: JobHandle = serde_json::from_slice(&body).unwrap();
        assert!(h.progress >= last_progress, "progress went backwards");
        last_progress = h.progress;
        if h.state >= JobState::Done {
            return h;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {job_id} did not finish");
}

#[tokio::test]
async fn volumes_match_index_contents() {
    let (status, _, body) = send(&app(), get("/api/volumes")).await;
    assert_eq!(status, StatusCode::OK);
    let v: VolumesResponse = serde_json::from_slice(&body).unwrap();
    let index = &fixture().index;
    assert_eq!(v.volumes.len(), 5);
    for (entry, summary) in v.volumes.iter().zip(&index.volumes) {
        assert_eq!(entry.id, summary.volume_id);
        let kept = index.records.iter().filter(|r| r.volume_id == entry.id).count();
        assert_eq!(entry.kept_slices, kept);
        assert_eq!(entry.total_slices, 32);
    }
    assert_eq!(v.total_slices, index.records.len());
    for (species, total) in &v.species_totals {
        assert_eq!(*total, index.records.iter().filter(|r| &r.species == species).count());
    }
}

#[tokio::test]
async fn empty_corpus_lists_nothing() {
    let (_, app) = app_with(ServiceConfig::default(), Some(empty_index()));
    let (status, _, body) = send(&app, get("/api/volumes")).await;
    assert_eq!(status, StatusCode::OK);
    let v: VolumesResponse = serde_json::from_slice(&body).unwrap();
    assert!(v.volumes.is_empty());
    assert_eq!(v.total_slices, 0);
}

#[tokio::test]
async fn building_index_is_503_with_retry_after() {
    let (state, app) = app_with(ServiceConfig::default(), None);
    let (status, headers, body) = send(&app, get("/api/volumes")).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(headers.contains_key(header::RETRY_AFTER));
    assert_eq!(error_body(&body).code, "index_building");

    state.set_index_failed("disk on fire".into());
    let (status, _, body) = send(&app, get("/api/volumes")).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(error_body(&body).message.contains("disk on fire"));
}

#[tokio::test]
async fn preprocess_returns_default_size_preview() {
    let (png, _) = slice_png("V2");
    let app = app();
    let p = upload(&app, "/api/preprocess?sensitivity=0.3", png).await;
    assert_eq!((p.width, p.height), (224, 224));
    assert_eq!(p.expires_in_secs, 900);
    use base64::Engine;
    let preview = base64::engine::general_purpose::STANDARD.decode(&p.image_png).unwrap();
    let img = SliceImage::decode(&preview).unwrap();
    assert_eq!((img.width(), img.height()), (224, 224));
    assert!(!p.report.rejected);
    assert!(p.report.threshold_used.unwrap() > p.report.otsu_threshold.unwrap());
}

#[tokio::test]
async fn full_sensitivity_on_faint_specimen_is_422() {
    let faint = SliceImage::from_fn(64, 64, |x, y| {
        let (dx, dy) = (x as f32 - 32.0, y as f32 - 32.0);
        if dx * dx + dy * dy < 300.0 {
            0.2
        } else {
            0.0
        }
    });
    let app = app();
    let (status, _, body) = send(&app, post_bytes("/api/preprocess?sensitivity=1.0", faint.encode_png().unwrap())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let e = error_body(&body);
    assert_eq!(e.code, "empty_foreground");
    assert!(e.message.contains("sensitivity too high"));

    // The same slice at the default sensitivity is fine.
    let (status, _, _) = send(&app, post_bytes("/api/preprocess", faint.encode_png().unwrap())).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn oversized_upload_is_413() {
    let mut config = ServiceConfig::default();
    config.max_upload_bytes = 10 * 1024 * 1024;
    let (_, app) = app_with(config, Some(empty_index()));
    let (status, _, body) = send(&app, post_bytes("/api/preprocess", vec![0u8; 50 * 1024 * 1024])).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(error_body(&body).code, "payload_too_large");

    // A declared length over the limit is refused before the body is read.
    let req = Request::post("/api/preprocess")
        .header(header::CONTENT_LENGTH, 50 * 1024 * 1024)
        .body(Body::empty())
        .unwrap();
    let (status, _, _) = send(&app, req).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn undecodable_upload_is_400() {
    let (status, _, body) = send(&app(), post_bytes("/api/preprocess", b"not an image".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_body(&body).code, "undecodable_image");
}

async fn classify_with(providers: Vec<ProviderSpec>) -> (StatusCode, Vec<u8>) {
    let mut config = ServiceConfig::default();
    config.providers = providers;
    let (_, app) = app_with(config, Some(fixture().index.clone()));
    let (png, _) = slice_png("V2");
    let p = upload(&app, "/api/preprocess", png).await;
    let (status, _, body) = send(&app, post_json("/api/classify", json!({"upload_id": p.upload_id}))).await;
    (status, body)
}

#[tokio::test]
async fn lockhartia_stub_reports_its_confidence() {
    let k = SPECIES.iter().position(|s| *s == "Lockhartia").unwrap();
    let rest = (1.0 - 0.8049) / 11.0;
    let probs: Vec<f64> = (0..12).map(|i| if i == k { 0.8049 } else { rest }).collect();
    let (status, body) = classify_with(vec![stub("cnn", Some(probs))]).await;
    assert_eq!(status, StatusCode::OK);
    let c: ClassifyResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(c.top.len(), 5);
    assert_eq!(c.top[0].label, "Lockhartia");
    assert!((c.top[0].confidence - 0.8049).abs() < 1e-12);
    assert_eq!(c.top[0].percent, "80.49%");
    assert!(!c.degraded);
    assert_eq!(c.providers.len(), 1);
}

#[tokio::test]
async fn uniform_stub_ranks_by_label_order() {
    let (status, body) = classify_with(vec![stub("flat", Some(vec![1.0 / 12.0; 12]))]).await;
    assert_eq!(status, StatusCode::OK);
    let c: ClassifyResponse = serde_json::from_slice(&body).unwrap();
    let mut alphabetical: Vec<&str> = SPECIES.to_vec();
    alphabetical.sort();
    let got: Vec<&str> = c.top.iter().map(|t| t.label.as_str()).collect();
    assert_eq!(got, alphabetical[..5]);
}

#[tokio::test]
async fn all_providers_down_is_424() {
    let (status, body) = classify_with(vec![stub("a", None), stub("b", None)]).await;
    assert_eq!(status, StatusCode::FAILED_DEPENDENCY);
    assert_eq!(error_body(&body).code, "providers_unavailable");
}

#[tokio::test]
async fn baseline_provider_keeps_classification_alive() {
    let (status, body) = classify_with(vec![
        stub("cnn", None),
        ProviderSpec::HuNearest { id: "hu".into() },
        stub("vit", Some(vec![1.0 / 12.0; 12])),
    ])
    .await;
    assert_eq!(status, StatusCode::OK);
    let c: ClassifyResponse = serde_json::from_slice(&body).unwrap();
    assert!(c.degraded);
    assert!(c.providers[0].error.is_some());
    assert!(c.providers[1].probs.is_some());
    let sum: f64 = c.probs.iter().sum();
    assert!((sum - 1.0).abs() < 1e-6);
}

#[tokio::test]
async fn expired_upload_is_404() {
    let mut config = ServiceConfig::default();
    config.upload_ttl_secs = 0;
    let (_, app) = app_with(config, Some(fixture().index.clone()));
    let (png, _) = slice_png("V1");
    let p = upload(&app, "/api/preprocess", png).await;
    let (status, _, body) = send(&app, post_json("/api/classify", json!({"upload_id": p.upload_id}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_body(&body).code, "unknown_upload");

    let (status, _, _) = send(&app, post_json("/api/classify", json!({"upload_id": "nope"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn unknown_ensemble_is_400() {
    let app = app();
    let (png, _) = slice_png("V1");
    let p = upload(&app, "/api/preprocess", png).await;
    let req = post_json("/api/classify", json!({"upload_id": p.upload_id, "ensemble": "nope"}));
    let (status, _, body) = send(&app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_body(&body).code, "unknown_ensemble");
}

#[tokio::test]
async fn self_slice_match_job_finds_itself() {
    let app = app();
    let (png, record) = slice_png("V3");
    let p = upload(&app, &corpus_query(), png).await;
    let (status, _, body) = send(&app, post_json("/api/match", json!({"upload_id": p.upload_id}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let h: JobHandle = serde_json::from_slice(&body).unwrap();
    let done = wait_for(&app, &h.job_id).await;
    assert_eq!(done.state, JobState::Done, "{:?}", done.error);
    assert_eq!(done.progress, 1.0);
    let result = done.result.unwrap();
    let r = &fixture().index.records[record];
    let top = &result.results[0];
    assert_eq!((top.result.volume_id.as_str(), top.result.axis, top.result.slice_index), (r.volume_id.as_str(), r.axis, r.index));
    assert!(top.thumbnail_png.is_some());
}

#[tokio::test]
async fn subset_match_only_returns_that_volume() {
    let app = app();
    let (png, _) = slice_png("V2");
    let p = upload(&app, &corpus_query(), png).await;
    let req = post_json(
        "/api/match",
        json!({"upload_id": p.upload_id, "params": {"candidate_volume_ids": ["V1"], "top_n": 5}}),
    );
    let (status, _, body) = send(&app, req).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let h: JobHandle = serde_json::from_slice(&body).unwrap();
    let done = wait_for(&app, &h.job_id).await;
    let results = done.result.unwrap().results;
    assert!(!results.is_empty());
    assert!(results.iter().all(|r| r.result.volume_id == "V1"));

    let req = post_json("/api/match", json!({"upload_id": p.upload_id, "params": {"candidate_volume_ids": ["V9"]}}));
    let (status, _, _) = send(&app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_job_is_410() {
    let (status, _, body) = send(&app(), get("/api/match/does-not-exist")).await;
    assert_eq!(status, StatusCode::GONE);
    assert_eq!(error_body(&body).code, "unknown_job");
}

#[tokio::test]
async fn full_queue_is_409() {
    let mut config = ServiceConfig::default();
    config.max_jobs = 1;
    config.workers = 1;
    let (_, app) = app_with(config, Some(fixture().index.clone()));
    let (png, _) = slice_png("V4");
    let p = upload(&app, &corpus_query(), png).await;
    let (first, _, body) = send(&app, post_json("/api/match", json!({"upload_id": p.upload_id}))).await;
    assert_eq!(first, StatusCode::ACCEPTED);
    let (second, _, err) = send(&app, post_json("/api/match", json!({"upload_id": p.upload_id}))).await;
    assert_eq!(second, StatusCode::CONFLICT);
    assert_eq!(error_body(&err).code, "queue_full");
    let h: JobHandle = serde_json::from_slice(&body).unwrap();
    wait_for(&app, &h.job_id).await;
}

#[tokio::test]
async fn match_before_index_ready_is_503() {
    let (state, app) = app_with(ServiceConfig::default(), None);
    let (status, _, _) = send(&app, post_json("/api/match", json!({"upload_id": "x"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    state.set_index(empty_index());
    let (status, _, _) = send(&app, post_json("/api/match", json!({"upload_id": "x"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn spec_and_health_are_served() {
    let app = app();
    let (status, _, body) = send(&app, get("/api/spec")).await;
    assert_eq!(status, StatusCode::OK);
    let doc: Value = serde_json::from_slice(&body).unwrap();
    for path in ["/api/volumes", "/api/preprocess", "/api/classify", "/api/match", "/api/match/{job_id}"] {
        assert!(doc["paths"].get(path).is_some(), "{path} missing from the spec");
    }
    let (status, _, body) = send(&app, get("/api/health")).await;
    assert_eq!(status, StatusCode::OK);
    let h: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(h["index"], "ready");

    let (status, _, body) = send(&app, get("/api/nowhere")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    error_body(&body);
}

#[tokio::test]
async fn malformed_json_gets_an_error_body() {
    let req = Request::post("/api/classify")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{"))
        .unwrap();
    let (status, _, body) = send(&app(), req).await;
    assert!(status.is_client_error());
    assert_eq!(error_body(&body).code, "invalid_json");
}
