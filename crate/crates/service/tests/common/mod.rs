#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use posedrive_core::engine::{AnimationModel, EngineConfig};
use posedrive_core::synthetic::{render_face, talking_head_pose};
use posedrive_core::RgbFrame;
use posedrive_service::config::VideoFormat;
use posedrive_service::jobs::Clock;
use posedrive_service::worker::Worker;
use posedrive_service::{build_state, encoder_for, seed_library, AppState, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

pub const BOUNDARY: &str = "posedrive-test-boundary";

pub fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig { data_dir: dir.join("data"), library_dir: dir.join("library"), ..ServiceConfig::default() }
}

pub fn state(cfg: ServiceConfig, clock: Box<dyn Clock>) -> Arc<AppState> {
    let st = build_state(cfg, clock).unwrap();
    seed_library(&st.library).unwrap();
    Arc::new(st)
}

/// Toy model with a short sampler so end-to-end tests stay quick.
pub fn fast_model() -> AnimationModel {
    let cfg = EngineConfig { sample_steps: 2, ..EngineConfig::toy() };
    AnimationModel::new(cfg).unwrap()
}

pub fn worker(st: &AppState, id: &str, format: VideoFormat) -> Worker {
    Worker::new(
        id,
        st.jobs.clone(),
        st.artifacts.clone(),
        fast_model(),
        st.detector.clone(),
        encoder_for(format),
        st.config.lease_seconds,
        st.config.max_attempts,
    )
}

pub fn face_frame(size: usize) -> RgbFrame {
    render_face(&talking_head_pose(1, 24.0, 16.0).frames()[0], size)
}

pub fn png(frame: &RgbFrame) -> Vec<u8> {
    posedrive_service::media::encode_png(frame)
}

pub fn face_png() -> Vec<u8> {
    png(&face_frame(96))
}

/// `(name, filename, bytes)` parts to a multipart body.
pub fn multipart(parts: &[(&str, Option<&str>, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, file, data) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match file {
            Some(f) => body.extend_from_slice(
                format!(
                    "Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\nContent-Type: application/octet-stream\r\n\r\n"
                )
                .as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes()),
        }
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub async fn post(app: &Router, uri: &str, parts: &[(&str, Option<&str>, &[u8])]) -> (StatusCode, Value) {
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

pub async fn get_raw(app: &Router, uri: &str) -> (StatusCode, Option<String>, Vec<u8>) {
    let req = Request::builder().uri(uri).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ct = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, ct, bytes)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, _, bytes) = get_raw(app, uri).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}
