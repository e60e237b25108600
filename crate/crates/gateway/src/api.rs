//! HTTP JSON API over the records store.
//!
//! Handlers hold no state of their own; every mutation goes through
//! [`RecordStore`], which serializes writers per store.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use tstkit_core::chord::ChordMeasurement;
use tstkit_core::interpret::{Assessment, Questionnaire};
use tstkit_core::pipeline::PipelineOptions;
use tstkit_core::raster::{self, Raster};
use tstkit_core::records::{
    CaptureArtifact, CaptureDecision, RecordStore, Reminder, StoreError, TstCase,
};
use tstkit_core::segment::{self, OverlayStyle, SegmentationMask};
use tstkit_core::GatePanelStatus;

use crate::capture::{self, CaptureInput, GateMetadata};
use crate::config::Config;
use crate::error::ApiError;

const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<RecordStore>,
    pub config: Arc<Config>,
}

impl AppState {
    pub fn new(store: RecordStore, config: Config) -> Self {
        Self {
            store: Arc::new(store),
            config: Arc::new(config),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/config", get(get_config))
        .route("/cases", post(create_case))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/captures", post(submit_capture))
        .route("/cases/{id}/captures/{cid}/overlay", get(get_overlay))
        .route("/cases/{id}/captures/{cid}/decision", post(decide_capture))
        .route("/cases/{id}/questionnaire", post(submit_questionnaire))
        .route("/cases/{id}/assessment", get(get_assessment))
        .route("/reminders/due", get(due_reminders))
        .route("/reminders/{id}/ack", post(ack_reminder))
        .fallback(|| async { ApiError::new(404, "not_found", "no such endpoint") })
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8], what: &str) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(400, "invalid_json", format!("{what}: {e}")))
}

/// Runs CPU-bound pipeline work off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn get_config(State(s): State<AppState>) -> Json<serde_json::Value> {
    let c = &s.config;
    Json(json!({
        "gate": c.gate,
        "capture": c.capture,
        "calibration": c.calibration,
        "rules": c.rules,
        "reminders": c.reminders,
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateCase {
    administered_at: Option<DateTime<Utc>>,
}

async fn create_case(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<TstCase>)> {
    let req: CreateCase = if body.iter().all(u8::is_ascii_whitespace) {
        CreateCase::default()
    } else {
        parse_json(&body, "case")?
    };
    let administered_at = req.administered_at.unwrap_or_else(Utc::now);
    let window = s.config.reminders;
    let case = blocking(move || {
        let case = s.store.create_case(administered_at)?;
        s.store.schedule_reminder(&case.case_id, window)?;
        Ok(s.store.load_case(&case.case_id)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(case)))
}

async fn get_case(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<TstCase>> {
    Ok(Json(s.store.load_case(&id)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OverlayLinks {
    pub semi_transparent: String,
    pub opaque: String,
}

fn overlay_links(case_id: &str, capture_id: &str) -> OverlayLinks {
    let base = format!("/cases/{case_id}/captures/{capture_id}/overlay");
    OverlayLinks {
        semi_transparent: format!("{base}?style=semi"),
        opaque: format!("{base}?style=opaque"),
    }
}

#[derive(Debug, Serialize)]
struct CaptureResponse {
    case_id: String,
    capture: CaptureArtifact,
    gate: GatePanelStatus,
    overlays: OverlayLinks,
}

#[derive(Default)]
struct Upload {
    image: Option<Bytes>,
    depth: Option<Bytes>,
    mask: Option<Bytes>,
    gate: Option<Bytes>,
}

fn check_content_type(field: &str, got: Option<&str>, allowed: &[&str]) -> ApiResult<()> {
    match got {
        Some(ct) if !allowed.contains(&ct) => Err(ApiError::new(
            415,
            "unsupported_media_type",
            format!("part {field:?} declared {ct}, expected one of {allowed:?}"),
        )),
        _ => Ok(()),
    }
}

async fn read_upload(mut mp: Multipart) -> ApiResult<Upload> {
    let bad = |e: axum::extract::multipart::MultipartError| {
        ApiError::new(400, "invalid_multipart", e.body_text())
    };
    let mut up = Upload::default();
    while let Some(field) = mp.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        let ct = field.content_type().map(str::to_string);
        let slot = match name.as_str() {
            "image" => {
                check_content_type("image", ct.as_deref(), &["image/png"])?;
                &mut up.image
            }
            "mask" => {
                check_content_type("mask", ct.as_deref(), &["image/png"])?;
                &mut up.mask
            }
            "depth" => {
                check_content_type("depth", ct.as_deref(), &["application/octet-stream"])?;
                &mut up.depth
            }
            "gate" => {
                check_content_type("gate", ct.as_deref(), &["application/json", "text/plain"])?;
                &mut up.gate
            }
            other => return Err(ApiError::bad_request(format!("unexpected part {other:?}"))),
        };
        if slot.is_some() {
            return Err(ApiError::bad_request(format!("duplicate part {name:?}")));
        }
        *slot = Some(field.bytes().await.map_err(bad)?);
    }
    Ok(up)
}

/// Decodes the upload parts into pipeline inputs.
pub fn decode_upload(
    image: &[u8],
    depth: Option<&[u8]>,
    mask: Option<&[u8]>,
) -> ApiResult<CaptureInput> {
    let image = raster::decode_png(image)?;
    let depth = depth.map(raster::decode_depth_frame).transpose()?;
    let mask = mask
        .map(|m| segment::decode_mask(m, image.width(), image.height()))
        .transpose()?;
    Ok(CaptureInput { image, depth, mask })
}

async fn submit_capture(
    State(s): State<AppState>,
    Path(case_id): Path<String>,
    mp: Multipart,
) -> ApiResult<(StatusCode, Json<CaptureResponse>)> {
    let case = s.store.load_case(&case_id)?;
    ensure_open_for_capture(&case)?;
    let up = read_upload(mp).await?;
    let image = up.image.ok_or_else(|| ApiError::new(400, "missing_part", "part \"image\" is required"))?;
    let gate = up.gate.ok_or_else(|| ApiError::new(400, "missing_part", "part \"gate\" is required"))?;
    let meta: GateMetadata = parse_json(&gate, "gate metadata")?;

    let resp = blocking(move || {
        let cfg = &s.config;
        let input = decode_upload(&image, up.depth.as_deref(), up.mask.as_deref())?;
        // Depth and orientation are checked before spending time on the image.
        let prepared = capture::prepare(input, cfg.capture.crop_side)?;
        let pre = capture::check_gate(&cfg.gate, &meta, prepared.depth.as_ref(), None)?;
        if !(pre.status.depth_ok && pre.status.orientation_ok) {
            return Err(capture::gate_failed(&pre));
        }
        let analysis = capture::analyze_prepared(
            prepared,
            &cfg.calibration,
            &PipelineOptions::default(),
        )?;
        let check =
            capture::check_gate(&cfg.gate, &meta, analysis.depth.as_ref(), Some(&analysis.measurement))?;
        if !check.status.all_ok {
            return Err(capture::gate_failed(&check));
        }

        let store = &s.store;
        let image_path = store.put_artifact(&raster::encode_png(&analysis.image), "png")?;
        let mut cap = CaptureArtifact::new(image_path, Utc::now());
        cap.mask_path = Some(store.put_artifact(&analysis.mask.to_png(), "png")?);
        if let Some(d) = &analysis.depth {
            cap.depth_path = Some(store.put_artifact(&raster::encode_depth_frame(d), "dpth")?);
        }
        cap.measurement = Some(analysis.measurement);
        cap.extra.insert("gate".into(), serde_json::to_value(check).expect("serializes"));
        let (case, _) = store.update_case(&case_id, |case| {
            ensure_open_for_capture(case)?;
            if let Some(last) = case.captures.last() {
                cap.captured_at = cap.captured_at.max(last.captured_at);
            }
            case.captures.push(cap.clone());
            case.refresh_status();
            Ok(())
        })?;
        Ok(CaptureResponse {
            overlays: overlay_links(&case.case_id, &cap.capture_id),
            case_id: case.case_id,
            capture: cap,
            gate: check.status,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(resp)))
}

fn ensure_open_for_capture(case: &TstCase) -> Result<(), StoreError> {
    if case.accepted_capture().is_some() {
        return Err(StoreError::Conflict(format!(
            "case {} already has an accepted capture",
            case.case_id
        )));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct OverlayQuery {
    style: Option<String>,
}

#[derive(Debug, Serialize)]
struct OverlayResponse {
    case_id: String,
    capture_id: String,
    measurement: Option<ChordMeasurement>,
    overlays: OverlayLinks,
}

async fn get_overlay(
    State(s): State<AppState>,
    Path((case_id, capture_id)): Path<(String, String)>,
    Query(q): Query<OverlayQuery>,
) -> ApiResult<Response> {
    let case = s.store.load_case(&case_id)?;
    let cap = case
        .capture(&capture_id)
        .cloned()
        .ok_or_else(|| ApiError::from(StoreError::CaptureNotFound {
            case_id: case_id.clone(),
            capture_id: capture_id.clone(),
        }))?;
    let style = match q.style.as_deref() {
        None => {
            return Ok(Json(OverlayResponse {
                overlays: overlay_links(&case_id, &capture_id),
                case_id,
                capture_id,
                measurement: cap.measurement,
            })
            .into_response())
        }
        Some("semi") => OverlayStyle::semi_transparent(),
        Some("opaque") => OverlayStyle::opaque(),
        Some(other) => {
            return Err(ApiError::bad_request(format!(
                "style {other:?} is not one of semi, opaque"
            )))
        }
    };
    let png = blocking(move || {
        let mask_path = cap
            .mask_path
            .as_deref()
            .ok_or_else(|| ApiError::new(404, "overlay_unavailable", "capture has no mask"))?;
        let image = raster::decode_png(&s.store.read_artifact(&cap.image_path)?)?;
        let mask = segment::decode_mask(&s.store.read_artifact(mask_path)?, image.width(), image.height())?;
        render_overlay_png(&image, &mask, style)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

pub fn render_overlay_png(image: &Raster, mask: &SegmentationMask, style: OverlayStyle) -> ApiResult<Vec<u8>> {
    capture::overlay_png(image, mask, style)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    decision: CaptureDecision,
}

async fn decide_capture(
    State(s): State<AppState>,
    Path((case_id, capture_id)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<TstCase>> {
    let req: DecisionBody = parse_json(&body, "decision")?;
    Ok(Json(s.store.decide_capture(&case_id, &capture_id, req.decision)?))
}

async fn submit_questionnaire(
    State(s): State<AppState>,
    Path(case_id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Assessment>> {
    let q: Questionnaire = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(422, "invalid_questionnaire", e.to_string()))?;
    let rules = s.config.rules.clone();
    let (_, assessment) = s.store.update_case(&case_id, |case| {
        let mm = case
            .accepted_capture()
            .and_then(|c| c.measurement.as_ref())
            .map(|m| m.diameter_mm)
            .ok_or_else(|| {
                StoreError::Conflict(format!("case {case_id} has no accepted, measured capture"))
            })?;
        let a = rules
            .classify(mm, &q)
            .map_err(|e| StoreError::Invariant(e.to_string()))?;
        case.questionnaire = Some(q);
        case.assessment = Some(a.clone());
        case.refresh_status();
        Ok(a)
    })?;
    Ok(Json(assessment))
}

async fn get_assessment(
    State(s): State<AppState>,
    Path(case_id): Path<String>,
) -> ApiResult<Json<Assessment>> {
    s.store
        .load_case(&case_id)?
        .assessment
        .map(Json)
        .ok_or_else(|| ApiError::new(404, "not_assessed", format!("case {case_id} has no assessment yet")))
}

#[derive(Debug, Deserialize)]
struct DueQuery {
    now: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DueReminders {
    pub now: DateTime<Utc>,
    pub reminders: Vec<Reminder>,
}

async fn due_reminders(
    State(s): State<AppState>,
    Query(q): Query<DueQuery>,
) -> ApiResult<Json<DueReminders>> {
    let now = match q.now {
        None => Utc::now(),
        Some(t) => DateTime::parse_from_rfc3339(&t)
            .map_err(|e| ApiError::new(400, "invalid_timestamp", format!("now={t:?}: {e}")))?
            .with_timezone(&Utc),
    };
    Ok(Json(DueReminders {
        now,
        reminders: s.store.due_reminders(now),
    }))
}

async fn ack_reminder(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Reminder>> {
    Ok(Json(s.store.acknowledge_reminder(&id)?))
}
