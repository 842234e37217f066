use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use foramslice_core::classify::{
    combine_or_fallback, predict_all, top_k, ClassifyError, EnsembleConfig, Fallback, PredictRequest, Provider,
    RankedLabel,
};
use foramslice_core::matcher::{match_query_with_progress, AxisCount, MatchParams};
use foramslice_core::preprocess::{preprocess_pipeline, PreprocessError, PreprocessReport};
use foramslice_core::{ClassProbabilities, MatchQuery, PreprocessParams, SliceImage};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::jobs::{JobHandle, JobKind, MatchJobResult, MatchedSlice};
use crate::{species_totals, AppState};

const TOP_LABELS: usize = 5;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/spec", get(spec))
        .route("/api/volumes", get(volumes))
        .route("/api/preprocess", post(preprocess))
        .route("/api/classify", post(classify))
        .route("/api/match", post(start_match))
        .route("/api/match/:job_id", get(poll_match))
        .fallback(not_found)
        // The upload limit is enforced in the handler so the 413 carries a
        // JSON body.
        .layer(DefaultBodyLimit::disable())
        .with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint", "see GET /api/spec")
}

fn json_error(e: JsonRejection) -> ApiError {
    ApiError::bad_request("invalid_json", e.body_text(), "see GET /api/spec for the request schema")
}

fn png_b64(image: &SliceImage) -> Result<String, ApiError> {
    image
        .encode_png()
        .map(|b| B64.encode(b))
        .map_err(|e| ApiError::internal(e.to_string()))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    index: &'static str,
    slices: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let (index, slices) = match state.corpus() {
        Ok(c) => ("ready", c.index.len()),
        Err(e) if e.body.code == "index_building" => ("building", 0),
        Err(_) => ("failed", 0),
    };
    Json(Health {
        status: "ok",
        index,
        slices,
    })
}

async fn spec() -> Json<serde_json::Value> {
    Json(crate::openapi::document())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEntry {
    pub id: String,
    pub species: String,
    pub dims: [usize; 3],
    pub kept_slices: usize,
    pub total_slices: usize,
    pub axes: Vec<AxisCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumesResponse {
    pub volumes: Vec<VolumeEntry>,
    /// Kept slices per species.
    pub species_totals: BTreeMap<String, usize>,
    pub total_slices: usize,
}

async fn volumes(State(state): State<Arc<AppState>>) -> Result<Json<VolumesResponse>, ApiError> {
    let corpus = state.corpus()?;
    let index = &corpus.index;
    let volumes: Vec<VolumeEntry> = index
        .volumes
        .iter()
        .map(|v| VolumeEntry {
            id: v.volume_id.clone(),
            species: v.species.clone(),
            dims: v.dims,
            kept_slices: v.kept(),
            total_slices: v.total(),
            axes: v.axes.clone(),
        })
        .collect();
    Ok(Json(VolumesResponse {
        total_slices: volumes.iter().map(|v| v.kept_slices).sum(),
        species_totals: species_totals(index),
        volumes,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessResponse {
    pub upload_id: String,
    pub expires_in_secs: u64,
    pub width: usize,
    pub height: usize,
    pub image_png: String,
    pub mask_png: String,
    pub report: PreprocessReport,
}

async fn preprocess(
    State(state): State<Arc<AppState>>,
    params: Result<Query<PreprocessParams>, QueryRejection>,
    headers: HeaderMap,
    body: Body,
) -> Result<Json<PreprocessResponse>, ApiError> {
    let Query(params) = params.map_err(|e| {
        ApiError::bad_request("invalid_params", e.body_text(), "preprocessing parameters go in the query string")
    })?;
    params
        .validate()
        .map_err(|e| ApiError::bad_request("invalid_params", e.to_string(), "check the parameter ranges in /api/spec"))?;

    let limit = state.config.max_upload_bytes;
    let too_large = || {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "payload_too_large",
            format!("upload exceeds the {limit}-byte limit"),
            "downscale the slice or raise max_upload_bytes in the service config",
        )
    };
    let declared = headers
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok());
    if declared.is_some_and(|n| n > limit) {
        return Err(too_large());
    }
    let bytes = axum::body::to_bytes(body, limit).await.map_err(|_| too_large())?;
    if bytes.is_empty() {
        return Err(ApiError::bad_request(
            "empty_upload",
            "request body is empty",
            "send the PNG or JPEG bytes as the request body",
        ));
    }

    let image = SliceImage::decode(&bytes).map_err(|e| {
        ApiError::bad_request("undecodable_image", e.to_string(), "only PNG and JPEG slices are accepted")
    })?;

    let worker_params = params.clone();
    let (image, out) = tokio::task::spawn_blocking(move || {
        let out = preprocess_pipeline(&image, &worker_params);
        (image, out)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;

    let (processed, mask) = match (out.image, out.mask) {
        (Some(i), Some(m)) => (i, m),
        _ => {
            let report = out.report;
            if report.error.as_deref() == Some(PreprocessError::EmptyForeground.to_string().as_str()) {
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "empty_foreground",
                    "sensitivity too high: no foreground pixel survives segmentation",
                    "lower the sensitivity parameter",
                ));
            }
            if report.rejected {
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "slice_rejected",
                    report.reason.unwrap_or_else(|| "slice rejected by the content filter".into()),
                    "the slice carries too little specimen; pick one nearer the centre or lower content_min_fraction",
                ));
            }
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "preprocess_failed",
                report.error.unwrap_or_else(|| "preprocessing failed".into()),
                "check that the slice shows a single specimen on a darker background",
            ));
        }
    };

    let image_png = png_b64(&processed)?;
    let mask_png = png_b64(&mask.to_image())?;
    let (width, height) = (processed.width(), processed.height());
    let upload_id = state.insert_upload(image, processed, params);
    Ok(Json(PreprocessResponse {
        upload_id,
        expires_in_secs: state.config.upload_ttl_secs,
        width,
        height,
        image_png,
        mask_png,
        report: out.report,
    }))
}

#[derive(Debug, Clone, Deserialize)]
pub struct ClassifyRequest {
    pub upload_id: String,
    /// Name of a configured ensemble; omitted uses `default` if configured,
    /// otherwise the first provider with majority fallback.
    #[serde(default)]
    pub ensemble: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub label: String,
    pub confidence: f64,
    /// Confidence as shown in the dashboard, e.g. `80.49%`.
    pub percent: String,
}

impl From<RankedLabel> for RankedPrediction {
    fn from(r: RankedLabel) -> Self {
        Self {
            percent: format!("{:.2}%", r.confidence * 100.0),
            label: r.label,
            confidence: r.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderReport {
    pub provider_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub upload_id: String,
    pub ensemble: String,
    pub top: Vec<RankedPrediction>,
    pub probs: Vec<f64>,
    /// True when a provider the ensemble needed was missing.
    pub degraded: bool,
    pub providers: Vec<ProviderReport>,
}

fn pick_ensemble(state: &AppState, name: Option<&str>) -> Result<(String, EnsembleConfig), ApiError> {
    match name {
        Some(n) => state
            .config
            .ensembles
            .get(n)
            .map(|e| (n.to_string(), e.clone()))
            .ok_or_else(|| {
                let known: Vec<&str> = state.config.ensembles.keys().map(String::as_str).collect();
                ApiError::bad_request(
                    "unknown_ensemble",
                    format!("no ensemble named {n:?}"),
                    format!("configured ensembles: {known:?}"),
                )
            }),
        None => Ok(match state.config.ensembles.get("default") {
            Some(e) => ("default".into(), e.clone()),
            None => (
                "default".into(),
                EnsembleConfig {
                    primary_provider_id: state.config.providers[0].id().to_string(),
                    rules: Vec::new(),
                    fallback: Fallback::Majority,
                },
            ),
        }),
    }
}

async fn classify(
    State(state): State<Arc<AppState>>,
    req: Result<Json<ClassifyRequest>, JsonRejection>,
) -> Result<Json<ClassifyResponse>, ApiError> {
    let Json(req) = req.map_err(json_error)?;
    let (ensemble_name, ensemble) = pick_ensemble(&state, req.ensemble.as_deref())?;
    let upload = state.upload(&req.upload_id).ok_or_else(|| ApiError::unknown_upload(&req.upload_id))?;

    let resolved = state.resolve_providers();
    let runnable: Vec<Arc<dyn Provider>> = resolved.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let labels = state.labels.clone();
    let request = PredictRequest::new(req.upload_id.clone(), upload.processed);
    let outputs = tokio::task::spawn_blocking(move || {
        let refs: Vec<&dyn Provider> = runnable.iter().map(|p| p.as_ref()).collect();
        predict_all(&refs, &request)
            .into_iter()
            .map(|r| r.and_then(|p| p.expect_len(&labels)))
            .collect::<Vec<_>>()
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;

    let mut outputs = outputs.into_iter();
    let mut reports = Vec::with_capacity(resolved.len());
    let mut predictions: Vec<ClassProbabilities> = Vec::new();
    for r in &resolved {
        match r {
            Err((id, why)) => reports.push(ProviderReport {
                provider_id: id.clone(),
                probs: None,
                error: Some(why.clone()),
            }),
            Ok(p) => match outputs.next().expect("one output per runnable provider") {
                Ok(probs) => {
                    reports.push(ProviderReport {
                        provider_id: p.id().to_string(),
                        probs: Some(probs.probs.clone()),
                        error: None,
                    });
                    predictions.push(probs);
                }
                Err(e) => {
                    log::warn!("provider {} failed: {e}", p.id());
                    reports.push(ProviderReport {
                        provider_id: p.id().to_string(),
                        probs: None,
                        error: Some(e.to_string()),
                    });
                }
            },
        }
    }
    if predictions.is_empty() {
        return Err(ApiError::new(
            StatusCode::FAILED_DEPENDENCY,
            "providers_unavailable",
            "every classifier provider failed",
            "see the per-provider errors in the service log; the nearest-Hu baseline needs a loaded index",
        ));
    }

    let (combined, degraded) = match combine_or_fallback(&predictions, &ensemble, &state.labels) {
        Ok(o) => (o.probs, o.degraded),
        // Neither the primary nor a vote is available: the lone survivor.
        Err(ClassifyError::MissingProvider(_)) => (predictions[0].clone(), true),
        Err(e) => return Err(ApiError::internal(e.to_string())),
    };
    let k = TOP_LABELS.min(state.labels.len());
    let top = top_k(&combined, &state.labels, k).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(ClassifyResponse {
        upload_id: req.upload_id,
        ensemble: ensemble_name,
        top: top.into_iter().map(RankedPrediction::from).collect(),
        probs: combined.probs,
        degraded,
        providers: reports,
    }))
}

#[derive(Debug, Clone, Deserialize)]
pub struct MatchRequest {
    pub upload_id: String,
    #[serde(default)]
    pub params: MatchParams,
}

async fn start_match(
    State(state): State<Arc<AppState>>,
    req: Result<Json<MatchRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = req.map_err(json_error)?;
    let corpus = state.corpus()?;
    req.params
        .validate()
        .map_err(|e| ApiError::bad_request("invalid_params", e.to_string(), "see MatchParams in /api/spec"))?;
    if let Some(ids) = &req.params.candidate_volume_ids {
        if let Some(bad) = ids.iter().find(|id| !corpus.index.volumes.iter().any(|v| &v.volume_id == *id)) {
            return Err(ApiError::bad_request(
                "unknown_volume",
                format!("volume {bad:?} is not in the corpus"),
                "GET /api/volumes lists the indexed volumes",
            ));
        }
    }
    let upload = state.upload(&req.upload_id).ok_or_else(|| ApiError::unknown_upload(&req.upload_id))?;

    state.jobs.expire(state.config.job_ttl());
    let handle = state.jobs.try_insert(JobKind::Match, state.config.max_jobs).ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "queue_full",
            format!("{} match jobs are already pending", state.config.max_jobs),
            "poll an existing job or retry once it finishes",
        )
    })?;

    let job_id = handle.job_id.clone();
    let runner = state.clone();
    tokio::spawn(async move {
        let Ok(_permit) = runner.workers.clone().acquire_owned().await else {
            return;
        };
        runner.jobs.set_running(&job_id);
        let worker = runner.clone();
        let id = job_id.clone();
        let outcome = tokio::task::spawn_blocking(move || run_match(&worker, &id, upload, req.params, &corpus))
            .await
            .unwrap_or_else(|e| Err(format!("match worker crashed: {e}")));
        runner.jobs.finish(&job_id, outcome);
    });

    Ok((StatusCode::ACCEPTED, Json(handle)).into_response())
}

fn run_match(
    state: &AppState,
    job_id: &str,
    upload: crate::Upload,
    params: MatchParams,
    corpus: &crate::ReadyCorpus,
) -> Result<MatchJobResult, String> {
    let query = MatchQuery::from_image(upload.original, &upload.params, params).map_err(|e| e.to_string())?;
    let outcome = match_query_with_progress(&query, &corpus.index, &|p| state.jobs.set_progress(job_id, p))
        .map_err(|e| e.to_string())?;
    let results = outcome
        .results
        .into_iter()
        .map(|r| {
            let thumbnail_png = corpus
                .index
                .find(&r.volume_id, r.axis, r.slice_index)
                .and_then(|rec| rec.image.encode_png().ok())
                .map(|b| B64.encode(b));
            MatchedSlice {
                result: r,
                thumbnail_png,
            }
        })
        .collect();
    Ok(MatchJobResult {
        results,
        timing: outcome.timing,
    })
}

async fn poll_match(State(state): State<Arc<AppState>>, Path(job_id): Path<String>) -> Result<Json<JobHandle>, ApiError> {
    state.jobs.expire(state.config.job_ttl());
    state.jobs.get(&job_id).map(Json).ok_or_else(|| {
        ApiError::new(
            StatusCode::GONE,
            "unknown_job",
            format!("job {job_id} does not exist or has expired"),
            "start a new match with POST /api/match",
        )
    })
}
