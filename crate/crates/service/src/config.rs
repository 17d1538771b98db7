use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::jobs::JobParams;

/// Video container used for job results.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoFormat {
    Mp4,
    RawFrames,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    /// Holds `artifacts/` and `jobs/`.
    pub data_dir: PathBuf,
    pub library_dir: PathBuf,
    /// Engine checkpoint; without one a freshly initialized toy model is used.
    pub weights: Option<PathBuf>,
    pub upload_limit_bytes: usize,
    pub workers: usize,
    pub lease_seconds: f64,
    pub max_attempts: u32,
    /// Upper bound on generated frames per job.
    pub max_frames: usize,
    pub poll_interval_ms: u64,
    pub video_format: VideoFormat,
    pub default_width: u32,
    pub default_height: u32,
    pub default_fps: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            library_dir: PathBuf::from("library"),
            weights: None,
            upload_limit_bytes: 100 * 1024 * 1024,
            workers: 1,
            lease_seconds: 300.0,
            max_attempts: 3,
            max_frames: 1440,
            poll_interval_ms: 250,
            video_format: VideoFormat::Mp4,
            default_width: 512,
            default_height: 512,
            default_fps: 24,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let cfg: Self = serde_json::from_str(&raw).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.upload_limit_bytes == 0 {
            return bad("upload_limit_bytes must be positive");
        }
        if !(self.lease_seconds.is_finite() && self.lease_seconds > 0.0) {
            return bad("lease_seconds must be positive");
        }
        if self.max_attempts == 0 || self.max_frames == 0 {
            return bad("max_attempts and max_frames must be positive");
        }
        let defaults =
            JobParams { width: self.default_width, height: self.default_height, fps: self.default_fps, seed: 0 };
        check_params(&defaults).map_err(ConfigError::Invalid)
    }

    pub fn default_params(&self) -> JobParams {
        JobParams { width: self.default_width, height: self.default_height, fps: self.default_fps, seed: 0 }
    }
}

/// Frame sizes must be even (4:2:0 video) and within 16..=2048; fps 1..=120.
pub fn check_params(p: &JobParams) -> Result<(), String> {
    for (name, v) in [("width", p.width), ("height", p.height)] {
        if !(16..=2048).contains(&v) || v % 2 != 0 {
            return Err(format!("{name} must be an even number in 16..=2048, got {v}"));
        }
    }
    if !(1..=120).contains(&p.fps) {
        return Err(format!("fps must be in 1..=120, got {}", p.fps));
    }
    Ok(())
}
