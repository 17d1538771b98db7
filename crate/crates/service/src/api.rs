//! REST surface under `/api`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::multipart::{Multipart, MultipartError, MultipartRejection};
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use posedrive_core::conditioning::locate_face;
use posedrive_core::pose::{
    extract_pose_from_video, neutral_face, parse_pose, pose_from_audio, resample_pose, to_canonical_json,
    AudioPosePredictor, LandmarkDetector, PoseError, PoseLibrary, PoseSequence,
};
use serde_json::{json, Value};

use crate::artifacts::{ArtifactError, ArtifactStore};
use crate::config::{check_params, ServiceConfig};
use crate::jobs::{GenerationJob, JobError, JobParams, JobStore};
use crate::media::{decode_image, decode_wav, encode_png};
use crate::video::decode_video;

pub const POSE_MEDIA_TYPE: &str = "application/vnd.posedrive.pose+json";

/// Shared handles for every request.
pub struct AppState {
    pub config: ServiceConfig,
    pub jobs: Arc<dyn JobStore>,
    pub artifacts: Arc<ArtifactStore>,
    pub library: Arc<PoseLibrary>,
    pub detector: Arc<dyn LandmarkDetector>,
    pub audio: Arc<dyn AudioPosePredictor>,
    /// Margin used to check that the reference has a locatable face.
    pub margin_ratio: f64,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        match e {
            JobError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "UnknownJob", e.to_string()),
            other => Self::internal(other),
        }
    }
}

impl From<ArtifactError> for ApiError {
    fn from(e: ArtifactError) -> Self {
        match e {
            ArtifactError::NotFound(_) | ArtifactError::InvalidId(_) => {
                Self::new(StatusCode::NOT_FOUND, "UnknownArtifact", e.to_string())
            }
            ArtifactError::Corrupt { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "CorruptArtifact", e.to_string())
            }
            other => Self::internal(other),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Uploaded multipart fields by name.
#[derive(Debug, Default)]
pub struct Form(HashMap<String, Bytes>);

impl Form {
    pub fn insert(&mut self, name: &str, data: impl Into<Bytes>) {
        self.0.insert(name.to_string(), data.into());
    }

    fn bytes(&self, name: &str) -> Option<&Bytes> {
        self.0.get(name)
    }

    fn text(&self, name: &str) -> ApiResult<Option<String>> {
        self.0
            .get(name)
            .map(|b| {
                String::from_utf8(b.to_vec())
                    .map(|s| s.trim().to_string())
                    .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "InvalidField", format!("{name} is not text")))
            })
            .transpose()
    }

    fn number<T: std::str::FromStr>(&self, name: &str) -> ApiResult<Option<T>> {
        match self.text(name)? {
            None => Ok(None),
            Some(s) if s.is_empty() => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| {
                ApiError::new(StatusCode::BAD_REQUEST, "InvalidParams", format!("{name}={s:?} is not a number"))
            }),
        }
    }
}

fn multipart_error(e: MultipartError) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "TooLarge", e.body_text())
    } else {
        ApiError::new(StatusCode::BAD_REQUEST, "BadMultipart", e.body_text())
    }
}

async fn read_form(multipart: Result<Multipart, MultipartRejection>) -> ApiResult<Form> {
    let mut multipart = multipart.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BadMultipart", e.body_text()))?;
    let mut form = Form::default();
    while let Some(field) = multipart.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(multipart_error)?;
        form.0.insert(name, data);
    }
    Ok(form)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn has_face(seq: &PoseSequence) -> bool {
    seq.frames().iter().any(|f| f.confident().next().is_some())
}

impl AppState {
    fn store_pose(&self, seq: &PoseSequence) -> ApiResult<Value> {
        let meta = self.artifacts.put(to_canonical_json(seq).as_bytes(), POSE_MEDIA_TYPE)?;
        Ok(json!({ "id": meta.id, "frames": seq.len(), "fps": seq.fps(), "duration_s": seq.duration_s() }))
    }

    /// Landmarks from an uploaded video; `code` names the failure reported
    /// to the client.
    fn pose_from_video_bytes(&self, bytes: &[u8], code: &'static str) -> ApiResult<PoseSequence> {
        let unprocessable = |c: &'static str, m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, c, m);
        let (frames, fps) = decode_video(bytes).map_err(|e| unprocessable(code, e.to_string()))?;
        let seq = extract_pose_from_video(&frames, fps, self.detector.as_ref()).map_err(|e| match e {
            PoseError::DetectorFailure(m) => {
                unprocessable(if code == "UndecodableMedia" { "DetectorFailure" } else { code }, m)
            }
            other => unprocessable(code, other.to_string()),
        })?;
        if !has_face(&seq) {
            let c = if code == "UndecodableMedia" { "DetectorFailure" } else { code };
            return Err(unprocessable(c, "no face detected in any frame".into()));
        }
        Ok(seq)
    }

    fn pose_from_audio_bytes(&self, bytes: &[u8], code: &'static str) -> ApiResult<PoseSequence> {
        let unprocessable = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, m);
        let (samples, rate) = decode_wav(bytes).map_err(|e| unprocessable(e.to_string()))?;
        pose_from_audio(&samples, rate, &neutral_face(), self.audio.as_ref()).map_err(|e| unprocessable(e.to_string()))
    }

    fn stored_pose(&self, id: &str) -> ApiResult<PoseSequence> {
        let unknown = || ApiError::new(StatusCode::NOT_FOUND, "UnknownPose", format!("no stored pose {id:?}"));
        let (meta, bytes) = self.artifacts.get(id).map_err(|e| match e {
            ArtifactError::NotFound(_) | ArtifactError::InvalidId(_) => unknown(),
            other => other.into(),
        })?;
        if meta.media_type != POSE_MEDIA_TYPE {
            return Err(unknown());
        }
        parse_pose(&String::from_utf8_lossy(&bytes)).map_err(ApiError::internal)
    }

    fn resolve_pose(&self, form: &Form) -> ApiResult<PoseSequence> {
        let source = form
            .text("pose_source")?
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "InvalidPoseSource", "pose_source is required"))?;
        let upload = |name: &str| {
            form.bytes("pose_file").or_else(|| form.bytes(name)).ok_or_else(|| {
                ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "InvalidPoseSource",
                    format!("pose_source {name} needs a pose_file upload"),
                )
            })
        };
        if let Some(id) = source.strip_prefix("library:") {
            return self.library.get(id).map_err(|e| match e {
                PoseError::NotFound(_) | PoseError::InvalidId(_) => {
                    ApiError::new(StatusCode::NOT_FOUND, "UnknownLibraryId", format!("no library pose {id:?}"))
                }
                other => ApiError::internal(other),
            });
        }
        if let Some(id) = source.strip_prefix("pose:") {
            return self.stored_pose(id);
        }
        match source.as_str() {
            "video" => self.pose_from_video_bytes(upload("video")?, "PoseExtractionFailed"),
            "audio" => self.pose_from_audio_bytes(upload("audio")?, "PoseExtractionFailed"),
            other => Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "InvalidPoseSource",
                format!("pose_source must be library:<id>, pose:<id>, video or audio, got {other:?}"),
            )),
        }
    }

    fn params(&self, form: &Form) -> ApiResult<JobParams> {
        let d = self.config.default_params();
        let p = JobParams {
            width: form.number("width")?.unwrap_or(d.width),
            height: form.number("height")?.unwrap_or(d.height),
            fps: form.number("fps")?.unwrap_or(d.fps),
            seed: form.number("seed")?.unwrap_or(d.seed),
        };
        check_params(&p).map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, "InvalidParams", m))?;
        Ok(p)
    }

    /// Validates an upload form and queues a job.
    pub fn submit(&self, form: &Form) -> ApiResult<GenerationJob> {
        let image = form
            .bytes("reference")
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "InvalidImage", "reference image is required"))?;
        let reference =
            decode_image(image).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidImage", e.to_string()))?;
        let params = self.params(form)?;
        let no_face = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "NoFace", m);
        let landmarks = self
            .detector
            .detect(&reference)
            .map_err(|e| no_face(format!("detector failed: {}", e.0)))?
            .ok_or_else(|| no_face("no face found in the reference image".into()))?;
        locate_face(&landmarks, self.margin_ratio, reference.width(), reference.height())
            .map_err(|e| no_face(e.to_string()))?;
        let pose = self.resolve_pose(form)?;
        let frames = resample_pose(&pose, f64::from(params.fps)).map_err(ApiError::internal)?.len();
        if frames > self.config.max_frames {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "TooManyFrames",
                format!("pose yields {frames} frames, limit is {}", self.config.max_frames),
            ));
        }
        let reference_ref = self.artifacts.put(&encode_png(&reference), "image/png")?.id;
        let pose_ref = self.artifacts.put(to_canonical_json(&pose).as_bytes(), POSE_MEDIA_TYPE)?.id;
        Ok(self.jobs.create(&reference_ref, &pose_ref, params)?)
    }
}

pub fn job_view(job: &GenerationJob) -> Value {
    let result = job.result.as_ref().map(|r| {
        json!({
            "url": format!("/api/artifacts/{}", r.artifact_id),
            "artifact_id": r.artifact_id,
            "media_type": r.media_type,
            "frames": r.frames,
            "fps": r.fps,
            "width": r.width,
            "height": r.height,
            "duration_s": r.duration_s,
        })
    });
    json!({
        "id": job.id,
        "url": format!("/api/jobs/{}", job.id),
        "created_at": job.created_at,
        "status": job.status,
        "reference_ref": job.reference_ref,
        "pose_ref": job.pose_ref,
        "params": job.params,
        "result": result,
        "error": job.error,
        "attempts": job.attempts,
        "history": job.history,
    })
}

async fn create_job(
    State(st): State<Arc<AppState>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let form = read_form(multipart).await?;
    let job = blocking(move || st.submit(&form)).await?;
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "id": job.id, "status": job.status, "url": format!("/api/jobs/{}", job.id) })),
    ))
}

async fn get_job(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let job = blocking(move || Ok(st.jobs.get(&id)?)).await?;
    Ok(Json(job_view(&job)))
}

async fn list_jobs(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let jobs = blocking(move || Ok(st.jobs.list()?)).await?;
    Ok(Json(Value::Array(jobs.iter().map(job_view).collect())))
}

async fn pose_library(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let entries = blocking(move || st.library.list().map_err(ApiError::internal)).await?;
    Ok(Json(serde_json::to_value(entries).map_err(ApiError::internal)?))
}

async fn extract_pose(
    State(st): State<Arc<AppState>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let form = read_form(multipart).await?;
    let body = blocking(move || {
        let bytes = form
            .bytes("video")
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "MissingUpload", "video upload is required"))?;
        let seq = st.pose_from_video_bytes(bytes, "UndecodableMedia")?;
        st.store_pose(&seq)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(body)))
}

async fn audio_pose(
    State(st): State<Arc<AppState>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let form = read_form(multipart).await?;
    let body = blocking(move || {
        let bytes = form
            .bytes("audio")
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "MissingUpload", "audio upload is required"))?;
        let seq = st.pose_from_audio_bytes(bytes, "UndecodableMedia")?;
        st.store_pose(&seq)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_artifact(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let (meta, bytes) = blocking(move || Ok(st.artifacts.get(&id)?)).await?;
    Ok(([(header::CONTENT_TYPE, meta.media_type)], bytes).into_response())
}

async fn openapi() -> Json<Value> {
    Json(openapi_document())
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.upload_limit_bytes;
    Router::new()
        .route("/api/jobs", post(create_job).get(list_jobs))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/pose-library", get(pose_library))
        .route("/api/pose/extract", post(extract_pose))
        .route("/api/pose/from-audio", post(audio_pose))
        .route("/api/artifacts/{id}", get(get_artifact))
        .route("/api/openapi.json", get(openapi))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn error_response(description: &str) -> Value {
    json!({ "description": description, "content": { "application/json": { "schema": { "$ref": "#/components/schemas/Error" } } } })
}

pub fn openapi_document() -> Value {
    let upload = |fields: Value, required: Value| {
        json!({ "required": true, "content": { "multipart/form-data": { "schema": {
            "type": "object", "properties": fields, "required": required } } } })
    };
    let binary = json!({ "type": "string", "format": "binary" });
    let pose_created = json!({ "description": "stored pose sequence", "content": { "application/json": { "schema": { "$ref": "#/components/schemas/PoseRef" } } } });
    json!({
        "openapi": "3.0.3",
        "info": { "title": "posedrive", "version": env!("CARGO_PKG_VERSION") },
        "paths": {
            "/api/jobs": {
                "post": {
                    "summary": "Queue a generation job",
                    "requestBody": upload(json!({
                        "reference": binary,
                        "pose_source": { "type": "string", "description": "library:<id>, pose:<id>, video or audio" },
                        "pose_file": binary,
                        "width": { "type": "integer", "default": 512 },
                        "height": { "type": "integer", "default": 512 },
                        "fps": { "type": "integer", "default": 24 },
                        "seed": { "type": "integer", "default": 0 }
                    }), json!(["reference", "pose_source"])),
                    "responses": {
                        "202": { "description": "queued", "content": { "application/json": { "schema": { "$ref": "#/components/schemas/JobRef" } } } },
                        "400": error_response("InvalidImage, InvalidParams or InvalidPoseSource"),
                        "404": error_response("UnknownLibraryId or UnknownPose"),
                        "413": error_response("TooLarge"),
                        "422": error_response("NoFace, PoseExtractionFailed or TooManyFrames")
                    }
                },
                "get": { "summary": "List jobs", "responses": { "200": { "description": "all jobs" } } }
            },
            "/api/jobs/{id}": {
                "get": {
                    "summary": "Job record",
                    "parameters": [{ "name": "id", "in": "path", "required": true, "schema": { "type": "string" } }],
                    "responses": {
                        "200": { "description": "job", "content": { "application/json": { "schema": { "$ref": "#/components/schemas/Job" } } } },
                        "404": error_response("UnknownJob")
                    }
                }
            },
            "/api/pose-library": {
                "get": { "summary": "Preset pose sequences", "responses": { "200": { "description": "entries with id, name, duration_s, fps" } } }
            },
            "/api/pose/extract": {
                "post": {
                    "summary": "Extract a pose sequence from a video",
                    "requestBody": upload(json!({ "video": binary }), json!(["video"])),
                    "responses": { "201": pose_created.clone(), "413": error_response("TooLarge"), "422": error_response("UndecodableMedia or DetectorFailure") }
                }
            },
            "/api/pose/from-audio": {
                "post": {
                    "summary": "Predict a pose sequence from WAV audio",
                    "requestBody": upload(json!({ "audio": binary }), json!(["audio"])),
                    "responses": { "201": pose_created, "413": error_response("TooLarge"), "422": error_response("UndecodableMedia") }
                }
            },
            "/api/artifacts/{id}": {
                "get": {
                    "summary": "Stored blob",
                    "parameters": [{ "name": "id", "in": "path", "required": true, "schema": { "type": "string" } }],
                    "responses": { "200": { "description": "blob bytes" }, "404": error_response("UnknownArtifact") }
                }
            },
            "/api/openapi.json": { "get": { "summary": "This document", "responses": { "200": { "description": "OpenAPI JSON" } } } }
        },
        "components": { "schemas": {
            "Error": { "type": "object", "properties": { "error": { "type": "string" }, "message": { "type": "string" } } },
            "JobRef": { "type": "object", "properties": { "id": { "type": "string" }, "status": { "type": "string" }, "url": { "type": "string" } } },
            "PoseRef": { "type": "object", "properties": { "id": { "type": "string" }, "frames": { "type": "integer" }, "fps": { "type": "number" }, "duration_s": { "type": "number" } } },
            "Job": { "type": "object", "properties": {
                "id": { "type": "string" },
                "status": { "type": "string", "enum": ["queued", "running", "succeeded", "failed"] },
                "params": { "type": "object" },
                "result": { "type": "object", "nullable": true },
                "error": { "type": "string", "nullable": true }
            } }
        } }
    })
}
