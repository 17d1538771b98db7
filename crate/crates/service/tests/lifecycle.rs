//! Worker crashes, lease expiry and exactly-once completion.

mod common;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use common::*;
use posedrive_core::pose::{DetectorError, ForegroundDetector, LandmarkDetector, PoseFrame};
use posedrive_core::RgbFrame;
use posedrive_service::api::Form;
use posedrive_service::config::VideoFormat;
use posedrive_service::jobs::{Clock, JobError, JobStatus, ManualClock};
use posedrive_service::worker::{Worker, WorkerError};
use posedrive_service::{encoder_for, AppState};

struct SharedClock(Arc<ManualClock>);

impl Clock for SharedClock {
    fn now(&self) -> f64 {
        self.0.now()
    }
}

/// Panics the first time it is used, like a worker process dying mid-job.
struct CrashOnce(AtomicBool);

impl LandmarkDetector for CrashOnce {
    fn detect(&self, frame: &RgbFrame) -> Result<Option<PoseFrame>, DetectorError> {
        if !self.0.swap(true, Ordering::SeqCst) {
            panic!("injected worker crash");
        }
        ForegroundDetector::default().detect(frame)
    }
}

struct Blind;

impl LandmarkDetector for Blind {
    fn detect(&self, _: &RgbFrame) -> Result<Option<PoseFrame>, DetectorError> {
        Ok(None)
    }
}

fn setup(dir: &std::path::Path) -> (Arc<AppState>, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(0.0));
    let mut cfg = config(dir);
    cfg.lease_seconds = 60.0;
    (state(cfg, Box::new(SharedClock(clock.clone()))), clock)
}

fn submit(st: &AppState) -> String {
    let mut form = Form::default();
    form.insert("reference", face_png());
    form.insert("pose_source", b"library:talk".to_vec());
    form.insert("width", b"32".to_vec());
    form.insert("height", b"32".to_vec());
    st.submit(&form).unwrap().id
}

fn worker_with(st: &AppState, id: &str, detector: Arc<dyn LandmarkDetector>, format: VideoFormat) -> Worker {
    Worker::new(id, st.jobs.clone(), st.artifacts.clone(), fast_model(), detector, encoder_for(format), 60.0, 3)
}

fn video_artifacts(st: &AppState) -> usize {
    st.artifacts
        .list()
        .unwrap()
        .iter()
        .filter(|m| m.media_type.starts_with("video/") || m.media_type.contains("frames"))
        .count()
}

#[test]
fn crashed_worker_job_is_reclaimed_and_completed_once() {
    let dir = tempfile::tempdir().unwrap();
    let (st, clock) = setup(dir.path());
    let id = submit(&st);

    let crashing = worker_with(&st, "a", Arc::new(CrashOnce(AtomicBool::new(false))), VideoFormat::RawFrames);
    let crashed = std::thread::spawn(move || crashing.run_once()).join();
    assert!(crashed.is_err(), "worker should have died");
    let job = st.jobs.get(&id).unwrap();
    assert_eq!(job.status, JobStatus::Running);

    // nothing to claim until the dead worker's lease runs out
    let healthy = worker_with(&st, "b", st.detector.clone(), VideoFormat::Mp4);
    assert!(healthy.run_once().unwrap().is_none());
    clock.advance(61.0);
    let done = healthy.run_once().unwrap().unwrap();
    assert_eq!(done.id, id);
    assert_eq!(done.status, JobStatus::Succeeded);
    assert_eq!(done.attempts, 2);

    let job = st.jobs.get(&id).unwrap();
    assert_eq!(job.history.iter().filter(|t| t.to.is_terminal()).count(), 1);
    assert_eq!(video_artifacts(&st), 1);
    let r = job.result.unwrap();
    assert_eq!(r.frames, 48);
    assert_eq!(r.duration_s, r.frames as f64 / f64::from(r.fps));
}

#[test]
fn zombie_worker_cannot_store_a_second_result() {
    let dir = tempfile::tempdir().unwrap();
    let (st, clock) = setup(dir.path());
    let id = submit(&st);

    let zombie = worker_with(&st, "zombie", st.detector.clone(), VideoFormat::RawFrames);
    let claim = zombie.claim().unwrap().unwrap();
    clock.advance(61.0);
    let healthy = worker_with(&st, "b", st.detector.clone(), VideoFormat::Mp4);
    assert_eq!(healthy.run_once().unwrap().unwrap().status, JobStatus::Succeeded);

    // the zombie wakes up and finishes its (different-format) render
    let late = zombie.process(&claim);
    assert!(matches!(late, Err(WorkerError::Jobs(JobError::LeaseLost(_)))), "{late:?}");
    assert_eq!(video_artifacts(&st), 1);
    let job = st.jobs.get(&id).unwrap();
    assert_eq!(job.status, JobStatus::Succeeded);
    assert_eq!(job.history.iter().filter(|t| t.to.is_terminal()).count(), 1);
}

#[test]
fn engine_no_face_fails_job_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let (st, _) = setup(dir.path());
    let id = submit(&st);
    let w = worker_with(&st, "w", Arc::new(Blind), VideoFormat::Mp4);
    let done = w.run_once().unwrap().unwrap();
    assert_eq!(done.id, id);
    assert_eq!(done.status, JobStatus::Failed);
    assert!(done.error.as_deref().unwrap().contains("NoFace"), "{:?}", done.error);
    assert!(done.result.is_none());
    assert_eq!(video_artifacts(&st), 0);
}
