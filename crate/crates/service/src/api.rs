use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::Utc;
use oralscan_core::imaging::DEFAULT_INPUT_SIZE;
use oralscan_core::prior::rasterize_strokes;
use oralscan_core::{crop_to_guide, FracRect, GuideGeometry, OralImage, QuestionnaireSchema, Stroke};
use serde::{Deserialize, Serialize};
use tokio::sync::OwnedMutexGuard;

use crate::analysis::{analyze_session, ExamReport, Models};
use crate::catalog::SuggestionCatalog;
use crate::error::{ServiceError, ServiceResult};
use crate::session::{ExamSession, SessionEvent, SessionStatus};
use crate::store::{check_name, SessionStore};

#[derive(Debug, Clone, Copy)]
pub struct ServiceConfig {
    /// Stroke brush radius in model-input pixels.
    pub brush_radius: f64,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            brush_radius: 1.5,
            max_upload_bytes: 16 * 1024 * 1024,
        }
    }
}

struct Inner {
    store: SessionStore,
    models: Models,
    catalog: SuggestionCatalog,
    schema: QuestionnaireSchema,
    config: ServiceConfig,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(
        store: SessionStore,
        models: Models,
        catalog: SuggestionCatalog,
        config: ServiceConfig,
    ) -> ServiceResult<Self> {
        catalog.validate()?;
        models.table.validate()?;
        let schema = models
            .enhanced
            .as_ref()
            .or(models.baseline.as_ref())
            .map(|p| p.questionnaire.clone())
            .unwrap_or_default();
        Ok(AppState {
            inner: Arc::new(Inner {
                store,
                models,
                catalog,
                schema,
                config,
                locks: Mutex::new(HashMap::new()),
            }),
        })
    }

    fn input_size(&self) -> usize {
        self.inner.models.input_size().unwrap_or(DEFAULT_INPUT_SIZE)
    }

    /// Exclusive access to one session for a mutation. A second concurrent
    /// mutation is refused rather than queued.
    pub fn lock_session(&self, session_id: &str) -> ServiceResult<OwnedMutexGuard<()>> {
        if !self.inner.store.exists(session_id) {
            return Err(ServiceError::NotFound(format!("session {session_id}")));
        }
        let m = {
            let mut locks = self.inner.locks.lock().expect("lock table poisoned");
            locks.entry(session_id.to_string()).or_default().clone()
        };
        m.try_lock_owned()
            .map_err(|_| ServiceError::Conflict(format!("session {session_id} is busy with another request")))
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.inner.config.max_upload_bytes;
    Router::new()
        .route("/questionnaire", get(get_questionnaire))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/questionnaire", put(submit_questionnaire))
        .route("/sessions/{id}/images", post(upload_image))
        .route("/sessions/{id}/images/{iid}/annotations", post(annotate))
        .route("/sessions/{id}/analyze", post(analyze))
        .route("/sessions/{id}/report", get(get_report))
        .route("/sessions/{id}/artifacts/{name}", get(get_artifact))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn get_questionnaire(State(state): State<AppState>) -> Json<QuestionnaireSchema> {
    Json(state.inner.schema.clone())
}

#[derive(Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub status: SessionStatus,
}

async fn create_session(State(state): State<AppState>) -> ServiceResult<(StatusCode, Json<Created>)> {
    let session_id = uuid::Uuid::new_v4().to_string();
    state.inner.store.create(
        &session_id,
        &SessionEvent::Created {
            session_id: session_id.clone(),
            at: Utc::now(),
        },
    )?;
    tracing::info!(%session_id, "session created");
    Ok((
        StatusCode::CREATED,
        Json(Created {
            session_id,
            status: SessionStatus::Collecting,
        }),
    ))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<ExamSession>> {
    Ok(Json(state.inner.store.load(&id)?))
}

#[derive(Serialize, Deserialize)]
pub struct QuestionnaireBody {
    /// Positional answers; `null` or a short list leaves questions open.
    pub answers: Vec<Option<usize>>,
}

async fn submit_questionnaire(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<QuestionnaireBody>,
) -> ServiceResult<Json<ExamSession>> {
    let _guard = state.lock_session(&id)?;
    let mut session = state.inner.store.load(&id)?;
    session.require_collecting()?;
    let schema = &state.inner.schema;
    if body.answers.len() > schema.questions.len() {
        return Err(oralscan_core::Error::Validation {
            field: "answers".into(),
            message: format!(
                "schema has {} questions, got {} answers",
                schema.questions.len(),
                body.answers.len()
            ),
        }
        .into());
    }
    for (i, a) in body.answers.iter().enumerate() {
        if let Some(choice) = a {
            schema.check_answer(i, *choice)?;
        }
    }
    let mut answers = body.answers;
    answers.resize(schema.questions.len(), None);
    let event = SessionEvent::QuestionnaireSubmitted { answers, at: Utc::now() };
    state.inner.store.append(&id, &event)?;
    session.apply(&event);
    Ok(Json(session))
}

fn parse_rect(name: &str, text: &str) -> ServiceResult<FracRect> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| ServiceError::BadRequest(format!("{name} must be four comma-separated numbers")))?;
    match v.as_slice() {
        [x0, y0, x1, y1] => Ok(FracRect::new(*x0, *y0, *x1, *y1)),
        _ => Err(ServiceError::BadRequest(format!("{name} must be four comma-separated numbers"))),
    }
}

/// Guide from `solid=x0,y0,x1,y1` and optional `dashed=...` query values;
/// both default to the full frame.
pub fn guide_from_query(q: &HashMap<String, String>) -> ServiceResult<GuideGeometry> {
    let solid = q.get("solid").map(|s| parse_rect("solid", s)).transpose()?;
    let dashed = q.get("dashed").map(|s| parse_rect("dashed", s)).transpose()?;
    Ok(GuideGeometry::new(
        dashed.unwrap_or(FracRect::FULL),
        solid.unwrap_or(FracRect::FULL),
    )?)
}

#[derive(Serialize, Deserialize)]
pub struct Uploaded {
    pub image_id: String,
    pub source_width: u32,
    pub source_height: u32,
    pub input_size: usize,
}

async fn upload_image(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
    body: Bytes,
) -> ServiceResult<(StatusCode, Json<Uploaded>)> {
    let _guard = state.lock_session(&id)?;
    let session = state.inner.store.load(&id)?;
    session.require_collecting()?;
    let guide = guide_from_query(&query)?;
    if body.is_empty() {
        return Err(ServiceError::BadRequest("request body must carry the image bytes".into()));
    }
    let image_id = format!("img-{}", session.images.len() + 1);
    let source = OralImage::decode(&body, &image_id, &id)?;
    let mut crop = crop_to_guide(&source, &guide, state.input_size())?;
    crop.quantize();
    state.inner.store.save_upload(&id, &image_id, &body, &crop)?;
    let (source_width, source_height) = (source.width() as u32, source.height() as u32);
    state.inner.store.append(
        &id,
        &SessionEvent::ImageUploaded {
            image_id: image_id.clone(),
            guide,
            source_width,
            source_height,
            at: Utc::now(),
        },
    )?;
    Ok((
        StatusCode::CREATED,
        Json(Uploaded {
            image_id,
            source_width,
            source_height,
            input_size: state.input_size(),
        }),
    ))
}

#[derive(Serialize, Deserialize)]
pub struct AnnotationBody {
    /// Polylines in crop-frame fractional coordinates.
    pub strokes: Vec<Stroke>,
}

/// The image's full symptom mask after the new strokes, one row of 0/1
/// values per pixel row.
#[derive(Debug, Serialize, Deserialize)]
pub struct MaskResponse {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub pain: Vec<Vec<u8>>,
    pub bleeding: Vec<Vec<u8>>,
    pub mask_url: String,
}

async fn annotate(
    State(state): State<AppState>,
    Path((id, iid)): Path<(String, String)>,
    Json(body): Json<AnnotationBody>,
) -> ServiceResult<Json<MaskResponse>> {
    let _guard = state.lock_session(&id)?;
    let mut session = state.inner.store.load(&id)?;
    session.require_collecting()?;
    session.image(&iid)?;
    let size = state.input_size();
    // rasterize first so invalid strokes never reach the log
    rasterize_strokes(&body.strokes, size, size, state.inner.config.brush_radius)?;
    let event = SessionEvent::Annotated {
        image_id: iid.clone(),
        strokes: body.strokes,
        at: Utc::now(),
    };
    state.inner.store.append(&id, &event)?;
    session.apply(&event);
    let strokes = &session.image(&iid)?.strokes;
    let mask = rasterize_strokes(strokes, size, size, state.inner.config.brush_radius)?;

    let name = format!("{iid}_mask.png");
    let png = image::RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        image::Rgb([mask[[r, c, 0]] * 255, mask[[r, c, 1]] * 255, 0])
    });
    png.save(state.inner.store.artifact_path(&id, &name)?)
        .map_err(oralscan_core::Error::from)?;
    let channel = |k: usize| -> Vec<Vec<u8>> {
        (0..size).map(|r| (0..size).map(|c| mask[[r, c, k]]).collect()).collect()
    };
    Ok(Json(MaskResponse {
        image_id: iid,
        height: size,
        width: size,
        pain: channel(0),
        bleeding: channel(1),
        mask_url: format!("/sessions/{id}/artifacts/{name}"),
    }))
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn analyze(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Response> {
    let _guard = state.lock_session(&id)?;
    let session = state.inner.store.load(&id)?;
    if session.status == SessionStatus::Analyzed {
        if let Some(bytes) = state.inner.store.read_report(&id)? {
            return Ok(json_bytes(bytes));
        }
    }
    let worker = state.clone();
    let bytes = tokio::task::spawn_blocking(move || -> ServiceResult<Vec<u8>> {
        let inner = &worker.inner;
        let report: ExamReport = analyze_session(
            &session,
            &inner.store,
            &inner.models,
            &inner.catalog,
            &inner.schema,
            inner.config.brush_radius,
            Utc::now(),
        )?;
        let bytes = serde_json::to_vec_pretty(&report).map_err(oralscan_core::Error::from)?;
        inner.store.write_report(&session.session_id, &bytes)?;
        inner
            .store
            .append(&session.session_id, &SessionEvent::Analyzed { at: report.analyzed_at })?;
        Ok(bytes)
    })
    .await
    .map_err(|e| ServiceError::Config(format!("analysis task failed: {e}")))??;
    tracing::info!(session_id = %id, "session analyzed");
    Ok(json_bytes(bytes))
}

async fn get_report(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Response> {
    let session = state.inner.store.load(&id)?;
    if session.status != SessionStatus::Analyzed {
        return Err(ServiceError::Conflict(format!("session {id} has not been analyzed")));
    }
    let bytes = state
        .inner
        .store
        .read_report(&id)?
        .ok_or_else(|| ServiceError::Config(format!("report for session {id} is missing from the store")))?;
    Ok(json_bytes(bytes))
}

async fn get_artifact(
    State(state): State<AppState>,
    Path((id, name)): Path<(String, String)>,
) -> ServiceResult<Response> {
    if !state.inner.store.exists(&id) {
        return Err(ServiceError::NotFound(format!("session {id}")));
    }
    check_name("artifact", &name)?;
    let path = state.inner.store.artifact_path(&id, &name)?;
    let bytes = std::fs::read(&path).map_err(|_| ServiceError::NotFound(format!("artifact {name}")))?;
    let mime = if name.ends_with(".png") {
        "image/png"
    } else if name.ends_with(".json") {
        "application/json"
    } else {
        "application/octet-stream"
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}
