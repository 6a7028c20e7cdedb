use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::Deserialize;
use tower_http::cors::CorsLayer;
use tower_http::services::{ServeDir, ServeFile};
use vidpriv_core::media::{discover_segments, extract_frame_png, probe, MediaError};
use vidpriv_core::{CaseRecording, JobId, JobStatus};

use crate::error::ApiError;
use crate::scrub::{scrub_json_responses, secrets, to_json_scrubbed};
use crate::views::{
    Accepted, CaseAccepted, CaseRequest, EventView, IntervalsView, JobDetail, JobSummary, OverridesRequest,
};
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

/// All routes, with restricted CORS and response scrubbing. `local` is the
/// address the UI is served from.
pub fn router(state: AppState, local: SocketAddr) -> Router {
    let origins: Vec<HeaderValue> = [format!("http://{local}"), format!("http://localhost:{}", local.port())]
        .into_iter()
        .filter_map(|o| HeaderValue::from_str(&o).ok())
        .collect();
    let cors = CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([CONTENT_TYPE]);

    let mut app = Router::new()
        .route("/health", get(health))
        .route("/cases", post(create_case))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(job_detail))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .route("/jobs/{id}/events", get(job_events))
        .route("/cases/{job}/preview", get(preview))
        .route("/cases/{job}/intervals", get(intervals))
        .route("/cases/{job}/overrides", post(overrides))
        .route("/fs/list", get(fs_list));
    if let Some(ui) = &state.config.ui_dir {
        app = app.fallback_service(ServeDir::new(ui).fallback(ServeFile::new(ui.join("index.html"))));
    }
    app.layer(axum::middleware::from_fn_with_state(state.clone(), scrub_json_responses)).layer(cors).with_state(state)
}

fn parse_id(raw: &str) -> ApiResult<JobId> {
    JobId::parse(raw).ok_or_else(|| ApiError::not_found("unknown job"))
}

fn load_job(state: &AppState, raw: &str) -> ApiResult<vidpriv_core::Job> {
    let id = parse_id(raw)?;
    state.orchestrator.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker task failed: {e}")))?
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    r.map(|Json(v)| v).map_err(|e| ApiError::validation(e.body_text()))
}

fn query<T>(r: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    r.map(|Query(v)| v).map_err(|e| ApiError::validation(e.body_text()))
}

async fn create_case(
    State(state): State<AppState>,
    req: Result<Json<CaseRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CaseAccepted>)> {
    let req = body(req)?;
    if req.patient_id.trim().is_empty() {
        return Err(ApiError::validation("patient_id must not be empty"));
    }
    let folder = req.folder.clone();
    let segments = blocking(move || {
        if !folder.is_dir() {
            return Err(ApiError::not_found("folder does not exist"));
        }
        match discover_segments(&folder) {
            Ok(s) => Ok(s),
            Err(MediaError::NoSegments) => Err(ApiError::validation("folder contains no recognised video files")),
            Err(e) => Err(ApiError::validation(e.to_string())),
        }
    })
    .await?;
    let cfg = &state.config;
    let mut case = CaseRecording::new(req.patient_id, segments, req.mode.unwrap_or(cfg.default_mode));
    case.profile = req.profile.unwrap_or_default().apply(cfg.profile.clone());
    case.detector_cfg = cfg.detector.clone();
    case.classifier = cfg.classifier.clone();
    let segment_count = case.segment_paths.len();
    let id = state.orchestrator.enqueue(case)?;
    Ok((StatusCode::ACCEPTED, Json(CaseAccepted { job_id: id, status: JobStatus::Queued, segment_count })))
}

async fn list_jobs(State(state): State<AppState>) -> Json<Vec<JobSummary>> {
    Json(state.orchestrator.list().iter().map(JobSummary::from).collect())
}

async fn job_detail(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobDetail>> {
    Ok(Json(JobDetail::from(&load_job(&state, &id)?)))
}

async fn cancel_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<(StatusCode, Json<Accepted>)> {
    let id = parse_id(&id)?;
    let status = state.orchestrator.cancel(&id)?;
    Ok((StatusCode::ACCEPTED, Json(Accepted { job_id: id, status })))
}

/// Replays the job's events, then streams new ones; ends after the terminal event.
async fn job_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let id = parse_id(&id)?;
    let (history, rx) = state.orchestrator.subscribe(&id)?;
    let (tx, out) = tokio::sync::mpsc::channel::<EventView>(64);
    let terminal_seen = history.last().is_some_and(|e| e.status.is_terminal());
    tokio::task::spawn_blocking(move || {
        for e in &history {
            if tx.blocking_send(EventView::from(e)).is_err() {
                return;
            }
        }
        if terminal_seen {
            return;
        }
        loop {
            match rx.recv_timeout(Duration::from_millis(250)) {
                Ok(e) => {
                    let end = e.status.is_terminal();
                    if tx.blocking_send(EventView::from(&e)).is_err() || end {
                        return;
                    }
                }
                Err(std::sync::mpsc::RecvTimeoutError::Timeout) if !tx.is_closed() => {}
                Err(_) => return,
            }
        }
    });
    let mut stopping = state.stopping.clone();
    let stream = futures::stream::unfold((out, state), |(mut out, state)| async move {
        let e = out.recv().await?;
        let data = to_json_scrubbed(&e, &secrets(&state));
        let event = Event::default().event("progress").id(e.seq.to_string()).data(data);
        Some((Ok(event), (out, state)))
    })
    .take_until(async move {
        let _ = stopping.wait_for(|s| *s).await;
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
struct PreviewQuery {
    t: f64,
    #[serde(default)]
    variant: Variant,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Variant {
    #[default]
    Original,
    Redacted,
}

async fn preview(
    State(state): State<AppState>,
    Path(job): Path<String>,
    q: Result<Query<PreviewQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    let job = load_job(&state, &job)?;
    let path: PathBuf = match q.variant {
        Variant::Original => state
            .orchestrator
            .intermediate_path(&job.id)
            .ok_or_else(|| ApiError::not_found("the merged recording of this job is not retained"))?,
        Variant::Redacted => match (&job.status, &job.report) {
            (JobStatus::Done, Some(r)) if r.output_path.is_file() => r.output_path.clone(),
            (JobStatus::Done, _) => return Err(ApiError::not_found("the published output is missing")),
            (status, _) => return Err(ApiError::conflict(format!("job is {status}; no redacted output yet"))),
        },
    };
    let tool = state.tool.clone();
    let png = blocking(move || {
        let info = probe(&tool, &path).map_err(|e| ApiError::internal(e.to_string()))?;
        if !(q.t.is_finite() && q.t >= 0.0 && q.t <= info.duration_s) {
            return Err(ApiError::validation(format!("t must lie in [0, {:.3}]", info.duration_s)));
        }
        // The last frame starts one period before the end.
        let t = q.t.min((info.duration_s - info.frame_period()).max(0.0));
        extract_frame_png(&tool, &path, t).map_err(|e| ApiError::internal(e.to_string()))
    })
    .await?;
    Ok(([(CONTENT_TYPE, "image/png")], png).into_response())
}

async fn intervals(State(state): State<AppState>, Path(job): Path<String>) -> ApiResult<Json<IntervalsView>> {
    let job = load_job(&state, &job)?;
    match (&job.status, &job.report) {
        (JobStatus::Done, Some(r)) => Ok(Json(IntervalsView {
            job_id: job.id.clone(),
            duration_s: r.media_duration_s,
            intervals: r.intervals_redacted.clone(),
        })),
        (status, _) => Err(ApiError::conflict(format!("job is {status}; intervals are reviewed once it is done"))),
    }
}

async fn overrides(
    State(state): State<AppState>,
    Path(job): Path<String>,
    req: Result<Json<OverridesRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Accepted>)> {
    let req = body(req)?;
    let source = parse_id(&job)?;
    let id = state.orchestrator.apply_overrides(&source, &req.overrides)?;
    Ok((StatusCode::ACCEPTED, Json(Accepted { job_id: id, status: JobStatus::Queued })))
}

#[derive(Debug, Deserialize)]
struct FsQuery {
    path: Option<PathBuf>,
}

async fn fs_list(
    State(state): State<AppState>,
    q: Result<Query<FsQuery>, QueryRejection>,
) -> ApiResult<Json<crate::views::FsListing>> {
    let q = query(q)?;
    let roots = state.config.fs_roots.clone();
    blocking(move || crate::fs::list(&roots, q.path.as_deref())).await.map(Json)
}
