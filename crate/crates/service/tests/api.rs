mod common;

use axum::http::StatusCode;
use common::*;
use posedrive_core::pose::parse_pose;
use posedrive_core::RgbFrame;
use posedrive_service::config::VideoFormat;
use posedrive_service::jobs::SystemClock;
use posedrive_service::media::encode_wav;
use posedrive_service::router;
use posedrive_service::video::{RawArchiveEncoder, VideoEncoder};
use serde_json::Value;

fn app(dir: &std::path::Path) -> (std::sync::Arc<posedrive_service::AppState>, axum::Router) {
    let st = state(config(dir), Box::new(SystemClock));
    let app = router(st.clone());
    (st, app)
}

#[tokio::test]
async fn library_lists_seeded_entries() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let (status, body) = get(&app, "/api/pose-library").await;
    assert_eq!(status, StatusCode::OK);
    let entries = body.as_array().unwrap();
    assert_eq!(entries.len(), 3);
    for e in entries {
        for key in ["id", "name", "duration_s", "fps"] {
            assert!(e.get(key).is_some(), "{e} lacks {key}");
        }
    }
    let talk = entries.iter().find(|e| e["id"] == "talk").unwrap();
    assert_eq!(talk["duration_s"], 2.0);
    assert_eq!(talk["fps"], 24.0);
}

#[tokio::test]
async fn submit_and_poll_queued_job() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let img = face_png();
    let (status, body) =
        post(&app, "/api/jobs", &[("reference", Some("face.png"), &img), ("pose_source", None, b"library:talk")]).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    assert_eq!(body["status"], "queued");
    let id = body["id"].as_str().unwrap();
    assert_eq!(body["url"], format!("/api/jobs/{id}"));

    let (status, job) = get(&app, &format!("/api/jobs/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(job["status"], "queued");
    assert_eq!(job["params"]["width"], 512);
    assert_eq!(job["params"]["height"], 512);
    assert_eq!(job["params"]["fps"], 24);
    assert!(job["result"].is_null() && job["error"].is_null());

    // polling is side-effect free
    let (_, again) = get(&app, &format!("/api/jobs/{id}")).await;
    assert_eq!(job, again);
}

#[tokio::test]
async fn submission_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let img = face_png();
    let blank = png(&RgbFrame::filled(64, 64, [0.3, 0.3, 0.3]));

    let (status, body) =
        post(&app, "/api/jobs", &[("reference", Some("x.png"), &blank), ("pose_source", None, b"library:talk")]).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("NoFace")));

    let (status, body) =
        post(&app, "/api/jobs", &[("reference", Some("x.png"), &img), ("pose_source", None, b"library:missing")]).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownLibraryId")));

    let (status, body) = post(
        &app,
        "/api/jobs",
        &[("reference", Some("x.png"), b"not an image"), ("pose_source", None, b"library:talk")],
    )
    .await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidImage")));

    let (status, body) = post(
        &app,
        "/api/jobs",
        &[
            ("reference", Some("x.png"), &img),
            ("pose_source", None, b"video"),
            ("pose_file", Some("v.mp4"), b"garbage"),
        ],
    )
    .await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("PoseExtractionFailed")));

    let (status, body) = post(
        &app,
        "/api/jobs",
        &[("reference", Some("x.png"), &img), ("pose_source", None, b"library:talk"), ("width", None, b"17")],
    )
    .await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidParams")));

    let (status, _) = get(&app, "/api/jobs/does-not-exist").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&app, &format!("/api/artifacts/{}", "0".repeat(64))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn uploads_over_the_limit_are_413() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.upload_limit_bytes = 4096;
    let st = state(cfg, Box::new(SystemClock));
    let app = router(st);
    let big = vec![0u8; 10_000];
    let (status, body) = post(&app, "/api/pose/extract", &[("video", Some("v.bin"), &big)]).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(body["error"], "TooLarge");
}

#[tokio::test]
async fn audio_upload_yields_reusable_pose() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let wav = encode_wav(&vec![0.0; 16_000], 16_000);
    let (status, body) = post(&app, "/api/pose/from-audio", &[("audio", Some("a.wav"), &wav)]).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["frames"], 24);
    let id = body["id"].as_str().unwrap().to_string();

    let (status, ct, bytes) = get_raw(&app, &format!("/api/artifacts/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some(posedrive_service::api::POSE_MEDIA_TYPE));
    assert_eq!(parse_pose(std::str::from_utf8(&bytes).unwrap()).unwrap().len(), 24);

    // second call of the two-step audio flow references the stored pose
    let img = face_png();
    let source = format!("pose:{id}");
    let (status, body) =
        post(&app, "/api/jobs", &[("reference", Some("f.png"), &img), ("pose_source", None, source.as_bytes())]).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");

    let (status, body) = post(&app, "/api/pose/from-audio", &[("audio", Some("a.wav"), b"RIFF....")]).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("UndecodableMedia")));
}

#[tokio::test]
async fn video_upload_extracts_pose() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let frames: Vec<_> = (0..12).map(|_| face_frame(64)).collect();
    let video = RawArchiveEncoder.encode(&frames, 12).unwrap().bytes;
    let (status, body) = post(&app, "/api/pose/extract", &[("video", Some("v.bin"), &video)]).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["frames"], 12);
    assert_eq!(body["duration_s"], 1.0);

    let (status, body) = post(&app, "/api/pose/extract", &[("video", Some("v.bin"), b"corrupt video bytes")]).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("UndecodableMedia")));

    let blank: Vec<_> = (0..4).map(|_| RgbFrame::filled(32, 32, [0.5; 3])).collect();
    let video = RawArchiveEncoder.encode(&blank, 4).unwrap().bytes;
    let (status, body) = post(&app, "/api/pose/extract", &[("video", Some("v.bin"), &video)]).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("DetectorFailure")));
}

#[tokio::test]
async fn finished_job_reports_duration_and_serves_video() {
    let dir = tempfile::tempdir().unwrap();
    let (st, app) = app(dir.path());
    let img = face_png();
    let (_, body) = post(
        &app,
        "/api/jobs",
        &[
            ("reference", Some("f.png"), &img),
            ("pose_source", None, b"library:talk"),
            ("width", None, b"64"),
            ("height", None, b"64"),
        ],
    )
    .await;
    let id = body["id"].as_str().unwrap().to_string();
    let w = worker(&st, "w0", VideoFormat::Mp4);
    let done = tokio::task::spawn_blocking(move || w.run_once().unwrap().unwrap()).await.unwrap();
    assert_eq!(done.id, id);

    let (_, job) = get(&app, &format!("/api/jobs/{id}")).await;
    assert_eq!(job["status"], "succeeded", "{job}");
    let result = &job["result"];
    assert_eq!(result["frames"], 48);
    assert_eq!(result["duration_s"], 2.0);
    let statuses: Vec<&str> = job["history"].as_array().unwrap().iter().map(|t| t["to"].as_str().unwrap()).collect();
    assert_eq!(statuses, ["queued", "running", "succeeded"]);

    let (status, ct, bytes) = get_raw(&app, result["url"].as_str().unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("video/mp4"));
    let info = posedrive_service::video::probe(&bytes).unwrap();
    assert_eq!((info.frames, info.width, info.height), (48, 64, 64));
    assert!((info.duration_s - 2.0).abs() <= 1.0 / 24.0);
}

#[tokio::test]
async fn openapi_document_lists_every_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let (status, doc) = get(&app, "/api/openapi.json").await;
    assert_eq!(status, StatusCode::OK);
    let paths = doc["paths"].as_object().unwrap();
    for p in [
        "/api/jobs",
        "/api/jobs/{id}",
        "/api/pose-library",
        "/api/pose/extract",
        "/api/pose/from-audio",
        "/api/artifacts/{id}",
        "/api/openapi.json",
    ] {
        assert!(paths.contains_key(p), "missing {p}");
    }
    assert!(matches!(doc["openapi"], Value::String(_)));
}
