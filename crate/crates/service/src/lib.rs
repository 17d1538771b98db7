//! Generation service: REST API, durable job store, artifact storage,
//! background workers and video encoding.

pub mod api;
pub mod artifacts;
pub mod config;
pub mod jobs;
pub mod media;
pub mod video;
pub mod worker;

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use posedrive_core::engine::{load_checkpoint, AnimationModel, EngineConfig, EngineError};
use posedrive_core::pose::{EnergyMouthPredictor, ForegroundDetector, PoseError, PoseLibrary};
use posedrive_core::synthetic::talking_head_pose;
use thiserror::Error;

pub use api::{router, AppState};
pub use config::ServiceConfig;

use artifacts::{ArtifactError, ArtifactStore};
use config::VideoFormat;
use jobs::{Clock, FileJobStore, JobError, JobStore, SystemClock};
use video::{H264Encoder, RawArchiveEncoder, VideoEncoder};
use worker::Worker;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Jobs(#[from] JobError),
    #[error(transparent)]
    Artifacts(#[from] ArtifactError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Adds the built-in presets to an empty library.
pub fn seed_library(library: &PoseLibrary) -> Result<(), PoseError> {
    if !library.list()?.is_empty() {
        return Ok(());
    }
    for (id, frames, period) in [("talk", 48, 16.0), ("nod", 72, 36.0), ("wave", 96, 24.0)] {
        library.add(id, &talking_head_pose(frames, 24.0, period))?;
    }
    Ok(())
}

/// The checkpoint named in the config, or a fresh toy-profile model.
pub fn load_model(weights: Option<&Path>) -> Result<AnimationModel, EngineError> {
    match weights {
        Some(path) => load_checkpoint(path),
        None => AnimationModel::new(EngineConfig::toy()),
    }
}

pub fn encoder_for(format: VideoFormat) -> Box<dyn VideoEncoder> {
    match format {
        VideoFormat::Mp4 => Box::new(H264Encoder),
        VideoFormat::RawFrames => Box::new(RawArchiveEncoder),
    }
}

/// Opens the stores under `config.data_dir` with the default detector and
/// audio predictor.
pub fn build_state(config: ServiceConfig, clock: Box<dyn Clock>) -> Result<AppState, ServiceError> {
    config.validate()?;
    let artifacts = Arc::new(ArtifactStore::open(config.data_dir.join("artifacts"))?);
    let jobs: Arc<dyn JobStore> = Arc::new(FileJobStore::open(config.data_dir.join("jobs"), clock)?);
    let library = Arc::new(PoseLibrary::open(&config.library_dir)?);
    Ok(AppState {
        jobs,
        artifacts,
        library,
        detector: Arc::new(ForegroundDetector::default()),
        audio: Arc::new(EnergyMouthPredictor::default()),
        margin_ratio: EngineConfig::default().margin_ratio,
        config,
    })
}

/// Serves the API and runs `config.workers` worker threads until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = Arc::new(build_state(config, Box::new(SystemClock))?);
    seed_library(&state.library)?;
    let cfg = &state.config;
    let stop = Arc::new(AtomicBool::new(false));
    let mut handles = Vec::new();
    for i in 0..cfg.workers.max(1) {
        let model = load_model(cfg.weights.as_deref())?;
        let worker = Worker::new(
            format!("worker-{i}"),
            state.jobs.clone(),
            state.artifacts.clone(),
            model,
            state.detector.clone(),
            encoder_for(cfg.video_format),
            cfg.lease_seconds,
            cfg.max_attempts,
        );
        let stop = stop.clone();
        let poll = Duration::from_millis(cfg.poll_interval_ms);
        handles.push(std::thread::spawn(move || worker.run_loop(&stop, poll)));
    }
    let listener = tokio::net::TcpListener::bind(&cfg.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    stop.store(true, Ordering::Relaxed);
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}
