//! Job execution: claim, generate, encode, store, finalize.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use posedrive_core::engine::{generate_video_with, AnimationModel};
use posedrive_core::pose::{parse_pose, resample_pose, LandmarkDetector};
use thiserror::Error;

use crate::artifacts::{ArtifactError, ArtifactStore};
use crate::jobs::{Claim, GenerationJob, JobError, JobResult, JobStore};
use crate::media::decode_image;
use crate::video::VideoEncoder;

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error(transparent)]
    Jobs(#[from] JobError),
}

pub struct Worker {
    pub id: String,
    store: Arc<dyn JobStore>,
    artifacts: Arc<ArtifactStore>,
    model: AnimationModel,
    detector: Arc<dyn LandmarkDetector>,
    encoder: Box<dyn VideoEncoder>,
    lease_secs: f64,
    max_attempts: u32,
}

impl Worker {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        store: Arc<dyn JobStore>,
        artifacts: Arc<ArtifactStore>,
        model: AnimationModel,
        detector: Arc<dyn LandmarkDetector>,
        encoder: Box<dyn VideoEncoder>,
        lease_secs: f64,
        max_attempts: u32,
    ) -> Self {
        Self { id: id.into(), store, artifacts, model, detector, encoder, lease_secs, max_attempts }
    }

    pub fn claim(&self) -> Result<Option<Claim>, WorkerError> {
        Ok(self.store.claim(&self.id, self.lease_secs, self.max_attempts)?)
    }

    /// Claims and runs at most one job. Returns the finalized job, or `None`
    /// when nothing was claimable.
    pub fn run_once(&self) -> Result<Option<GenerationJob>, WorkerError> {
        match self.claim()? {
            Some(claim) => self.process(&claim).map(Some),
            None => Ok(None),
        }
    }

    /// Runs a claimed job to a terminal state. Fails with `LeaseLost` when
    /// another worker took the job over in the meantime.
    pub fn process(&self, claim: &Claim) -> Result<GenerationJob, WorkerError> {
        let job = &claim.job;
        let mut renew_err = None;
        let outcome = self.render(job, &mut |_, _| {
            if renew_err.is_none() {
                renew_err = self.store.renew(&job.id, &claim.token, self.lease_secs).err();
            }
        });
        if let Some(e @ JobError::LeaseLost(_)) = renew_err {
            return Err(e.into());
        }
        let done = match outcome {
            Ok((bytes, media_type, frames)) => {
                let p = job.params;
                let artifacts = &self.artifacts;
                self.store.finish(&job.id, &claim.token, &mut || {
                    let meta = artifacts.put(&bytes, media_type).map_err(|e| e.to_string())?;
                    Ok(JobResult {
                        artifact_id: meta.id,
                        media_type: meta.media_type,
                        frames,
                        fps: p.fps,
                        width: p.width,
                        height: p.height,
                        duration_s: frames as f64 / f64::from(p.fps),
                    })
                })?
            }
            Err(msg) => self.store.fail(&job.id, &claim.token, &msg)?,
        };
        tracing::info!(job = %done.id, status = ?done.status, worker = %self.id, "job finished");
        Ok(done)
    }

    fn render(
        &self,
        job: &GenerationJob,
        progress: &mut dyn FnMut(usize, usize),
    ) -> Result<(Vec<u8>, &'static str, usize), String> {
        let load = |id: &str| self.artifacts.get(id).map(|(_, b)| b).map_err(|e: ArtifactError| e.to_string());
        let reference = decode_image(&load(&job.reference_ref)?).map_err(|e| e.to_string())?;
        let pose_text =
            String::from_utf8(load(&job.pose_ref)?).map_err(|_| "pose artifact is not UTF-8".to_string())?;
        let pose = parse_pose(&pose_text).map_err(|e| e.to_string())?;
        let pose = resample_pose(&pose, f64::from(job.params.fps)).map_err(|e| e.to_string())?;
        let size = self.model.config().image_size;
        let reference = reference.resize_nearest(size, size);
        let out =
            generate_video_with(&self.model, &reference, &pose, self.detector.as_ref(), job.params.seed, progress)
                .map_err(|e| e.to_string())?;
        let (w, h) = (job.params.width as usize, job.params.height as usize);
        let frames: Vec<_> = out.frames.iter().map(|f| f.resize_nearest(w, h)).collect();
        let video = self.encoder.encode(&frames, job.params.fps).map_err(|e| e.to_string())?;
        Ok((video.bytes, video.media_type, frames.len()))
    }

    /// Polls for work until `stop` is set.
    pub fn run_loop(&self, stop: &AtomicBool, poll: Duration) {
        while !stop.load(Ordering::Relaxed) {
            match self.run_once() {
                Ok(Some(_)) => {}
                Ok(None) => std::thread::sleep(poll),
                Err(e) => {
                    tracing::warn!(worker = %self.id, error = %e, "job abandoned");
                    std::thread::sleep(poll);
                }
            }
        }
    }
}
