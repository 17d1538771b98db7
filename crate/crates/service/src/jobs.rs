//! Durable generation jobs with leased claims.
//!
//! Status moves only along queued -> running -> {succeeded, failed}. A
//! worker's claim carries a lease token; when the lease expires the job stays
//! `running` but another worker may reclaim it, and the stale holder can no
//! longer finish it.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JobError {
    #[error("job {0} not found")]
    NotFound(String),
    #[error("lease on job {0} is no longer held")]
    LeaseLost(String),
    #[error("job {id} is {status:?}, cannot move to {to:?}")]
    BadTransition { id: String, status: JobStatus, to: JobStatus },
    #[error("job record unreadable: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Clock: Send + Sync {
    /// Seconds since the Unix epoch.
    fn now(&self) -> f64;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(Mutex<f64>);

impl ManualClock {
    pub fn new(start: f64) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, secs: f64) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) += secs;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        *self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Succeeded | Self::Failed)
    }

    fn allows(self, to: JobStatus) -> bool {
        matches!((self, to), (Self::Queued, Self::Running) | (Self::Running, Self::Succeeded | Self::Failed))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobParams {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub artifact_id: String,
    pub media_type: String,
    pub frames: usize,
    pub fps: u32,
    pub width: u32,
    pub height: u32,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lease {
    pub worker: String,
    pub token: String,
    pub expires_at: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: Option<JobStatus>,
    pub to: JobStatus,
    pub at: f64,
    pub worker: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub id: String,
    pub created_at: f64,
    pub status: JobStatus,
    pub reference_ref: String,
    pub pose_ref: String,
    pub params: JobParams,
    pub result: Option<JobResult>,
    pub error: Option<String>,
    pub lease: Option<Lease>,
    /// Number of claims, including reclaims after an expired lease.
    pub attempts: u32,
    pub history: Vec<Transition>,
}

/// A successful claim: the job snapshot and the token proving the lease.
#[derive(Clone, Debug)]
pub struct Claim {
    pub job: GenerationJob,
    pub token: String,
}

pub trait JobStore: Send + Sync {
    fn create(&self, reference_ref: &str, pose_ref: &str, params: JobParams) -> Result<GenerationJob, JobError>;

    fn get(&self, id: &str) -> Result<GenerationJob, JobError>;

    fn list(&self) -> Result<Vec<GenerationJob>, JobError>;

    /// Claims the oldest queued job, or a running job whose lease expired.
    /// Jobs whose attempts reach `max_attempts` are failed instead.
    fn claim(&self, worker: &str, lease_secs: f64, max_attempts: u32) -> Result<Option<Claim>, JobError>;

    fn renew(&self, id: &str, token: &str, lease_secs: f64) -> Result<(), JobError>;

    /// Runs `produce` and records its result as `succeeded`, all while the
    /// lease is verified and held, so a stale holder never stores a result.
    /// An `Err` from `produce` fails the job with that message.
    fn finish(
        &self,
        id: &str,
        token: &str,
        produce: &mut dyn FnMut() -> Result<JobResult, String>,
    ) -> Result<GenerationJob, JobError>;

    fn fail(&self, id: &str, token: &str, error: &str) -> Result<GenerationJob, JobError>;
}

/// One JSON file per job under a directory; a process-wide mutex makes every
/// read-modify-write a compare-and-swap.
pub struct FileJobStore {
    dir: PathBuf,
    clock: Box<dyn Clock>,
    lock: Mutex<()>,
}

impl FileJobStore {
    pub fn open(dir: impl Into<PathBuf>, clock: Box<dyn Clock>) -> Result<Self, JobError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, clock, lock: Mutex::new(()) })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn load(&self, id: &str) -> Result<GenerationJob, JobError> {
        if id.is_empty() || !id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-') {
            return Err(JobError::NotFound(id.to_string()));
        }
        let raw = match fs::read(self.path(id)) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(JobError::NotFound(id.to_string())),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&raw).map_err(|e| JobError::Corrupt(e.to_string()))
    }

    fn save(&self, job: &GenerationJob) -> Result<(), JobError> {
        let json = serde_json::to_vec_pretty(job).map_err(|e| JobError::Corrupt(e.to_string()))?;
        let path = self.path(&job.id);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    fn all(&self) -> Result<Vec<GenerationJob>, JobError> {
        let mut jobs = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                    jobs.push(self.load(id)?);
                }
            }
        }
        jobs.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(jobs)
    }

    fn transition(&self, job: &mut GenerationJob, to: JobStatus, worker: Option<String>) -> Result<(), JobError> {
        if !job.status.allows(to) {
            return Err(JobError::BadTransition { id: job.id.clone(), status: job.status, to });
        }
        job.history.push(Transition { from: Some(job.status), to, at: self.clock.now(), worker });
        job.status = to;
        Ok(())
    }

    fn held(&self, id: &str, token: &str) -> Result<GenerationJob, JobError> {
        let job = self.load(id)?;
        match &job.lease {
            Some(l) if job.status == JobStatus::Running && l.token == token => Ok(job),
            _ => Err(JobError::LeaseLost(id.to_string())),
        }
    }

    fn guard(&self) -> std::sync::MutexGuard<'_, ()> {
        self.lock.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl JobStore for FileJobStore {
    fn create(&self, reference_ref: &str, pose_ref: &str, params: JobParams) -> Result<GenerationJob, JobError> {
        let _g = self.guard();
        let now = self.clock.now();
        let job = GenerationJob {
            id: uuid::Uuid::new_v4().to_string(),
            created_at: now,
            status: JobStatus::Queued,
            reference_ref: reference_ref.to_string(),
            pose_ref: pose_ref.to_string(),
            params,
            result: None,
            error: None,
            lease: None,
            attempts: 0,
            history: vec![Transition { from: None, to: JobStatus::Queued, at: now, worker: None }],
        };
        self.save(&job)?;
        Ok(job)
    }

    fn get(&self, id: &str) -> Result<GenerationJob, JobError> {
        let _g = self.guard();
        self.load(id)
    }

    fn list(&self) -> Result<Vec<GenerationJob>, JobError> {
        let _g = self.guard();
        self.all()
    }

    fn claim(&self, worker: &str, lease_secs: f64, max_attempts: u32) -> Result<Option<Claim>, JobError> {
        let _g = self.guard();
        let now = self.clock.now();
        for mut job in self.all()? {
            let expired = job.status == JobStatus::Running && job.lease.as_ref().is_none_or(|l| l.expires_at <= now);
            if job.status != JobStatus::Queued && !expired {
                continue;
            }
            if expired && job.attempts >= max_attempts {
                job.lease = None;
                job.error = Some(format!("abandoned after {} attempts with expired leases", job.attempts));
                self.transition(&mut job, JobStatus::Failed, None)?;
                self.save(&job)?;
                continue;
            }
            if job.status == JobStatus::Queued {
                self.transition(&mut job, JobStatus::Running, Some(worker.to_string()))?;
            }
            let token = uuid::Uuid::new_v4().to_string();
            job.lease = Some(Lease { worker: worker.to_string(), token: token.clone(), expires_at: now + lease_secs });
            job.attempts += 1;
            self.save(&job)?;
            return Ok(Some(Claim { job, token }));
        }
        Ok(None)
    }

    fn renew(&self, id: &str, token: &str, lease_secs: f64) -> Result<(), JobError> {
        let _g = self.guard();
        let mut job = self.held(id, token)?;
        if let Some(l) = job.lease.as_mut() {
            l.expires_at = self.clock.now() + lease_secs;
        }
        self.save(&job)
    }

    fn finish(
        &self,
        id: &str,
        token: &str,
        produce: &mut dyn FnMut() -> Result<JobResult, String>,
    ) -> Result<GenerationJob, JobError> {
        let _g = self.guard();
        let mut job = self.held(id, token)?;
        let worker = job.lease.take().map(|l| l.worker);
        match produce() {
            Ok(result) => {
                job.result = Some(result);
                self.transition(&mut job, JobStatus::Succeeded, worker)?;
            }
            Err(e) => {
                job.error = Some(e);
                self.transition(&mut job, JobStatus::Failed, worker)?;
            }
        }
        self.save(&job)?;
        Ok(job)
    }

    fn fail(&self, id: &str, token: &str, error: &str) -> Result<GenerationJob, JobError> {
        let _g = self.guard();
        let mut job = self.held(id, token)?;
        let worker = job.lease.take().map(|l| l.worker);
        job.error = Some(error.to_string());
        self.transition(&mut job, JobStatus::Failed, worker)?;
        self.save(&job)?;
        Ok(job)
    }
}

/// Jobs grouped by status, for quick inspection.
pub fn status_counts(jobs: &[GenerationJob]) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    for j in jobs {
        let key = match j.status {
            JobStatus::Queued => "queued",
            JobStatus::Running => "running",
            JobStatus::Succeeded => "succeeded",
            JobStatus::Failed => "failed",
        };
        *out.entry(key).or_insert(0) += 1;
    }
    out
}
