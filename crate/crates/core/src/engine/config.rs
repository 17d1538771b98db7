use serde::{Deserialize, Serialize};

use super::EngineError;

/// Latent codec profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    /// Space-to-channel rearrangement; exactly invertible.
    Lossless,
    /// Small convolutional autoencoder.
    Learned,
}

/// What the first clip sees as its motion window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionInit {
    /// `n_motion` copies of the reference image.
    Reference,
    /// All-zero frames.
    Zeros,
}

/// Engine hyperparameters. The JSON form uses these field names verbatim
/// (the diffusion step count is `"T"`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub image_size: usize,
    pub latent_down: usize,
    pub latent_channels: usize,
    pub clip_len: usize,
    pub n_motion: usize,
    #[serde(rename = "T")]
    pub train_timesteps: usize,
    pub sample_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub fps_out: u32,
    pub seed: u64,
    pub codec: CodecKind,
    /// UNet width at full latent resolution; doubled at the second level.
    pub base_channels: usize,
    /// Single-head attention width.
    pub attn_dim: usize,
    /// Image-embedding width for cross-attention.
    pub embed_dim: usize,
    pub norm_groups: usize,
    /// Pose guider / face-mask encoder width before the first downsample.
    pub guider_channels: usize,
    pub motion_init: MotionInit,
    pub margin_ratio: f64,
    pub learning_rate: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            image_size: 512,
            latent_down: 8,
            latent_channels: 4,
            clip_len: 16,
            n_motion: 2,
            train_timesteps: 1000,
            sample_steps: 25,
            beta_start: 8.5e-4,
            beta_end: 1.2e-2,
            fps_out: 24,
            seed: 0,
            codec: CodecKind::Learned,
            base_channels: 32,
            attn_dim: 64,
            embed_dim: 64,
            norm_groups: 8,
            guider_channels: 8,
            motion_init: MotionInit::Reference,
            margin_ratio: 0.10,
            learning_rate: 2e-3,
        }
    }
}

impl EngineConfig {
    /// 64x64 frames, lossless factor-4 latent (48 channels), 8-frame clips,
    /// 64 base channels.
    pub fn toy() -> Self {
        Self {
            image_size: 64,
            latent_down: 4,
            latent_channels: 48,
            clip_len: 8,
            codec: CodecKind::Lossless,
            // wider than the 48-channel latent
            base_channels: 64,
            ..Self::default()
        }
    }

    pub fn latent_size(&self) -> usize {
        self.image_size / self.latent_down
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| EngineError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::BadConfig(m));
        if self.latent_down == 0 || !self.latent_down.is_power_of_two() {
            return bad(format!("latent_down {} must be a power of two", self.latent_down));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(self.latent_down) {
            return bad(format!("image_size {} not divisible by latent_down {}", self.image_size, self.latent_down));
        }
        if !self.latent_size().is_multiple_of(2) {
            return bad("latent side must be even for the two-level UNet".into());
        }
        if self.sample_steps == 0 || self.train_timesteps < self.sample_steps {
            return bad(format!(
                "need T >= sample_steps >= 1, got T={} sample_steps={}",
                self.train_timesteps, self.sample_steps
            ));
        }
        if self.clip_len == 0 {
            return bad("clip_len must be at least 1".into());
        }
        if ![0, 1, 2, 4].contains(&self.n_motion) {
            return bad(format!("n_motion {} not in {{0, 1, 2, 4}}", self.n_motion));
        }
        if self.codec == CodecKind::Lossless && self.latent_channels != 3 * self.latent_down * self.latent_down {
            return bad(format!(
                "lossless codec needs latent_channels = 3 * latent_down^2 = {}",
                3 * self.latent_down * self.latent_down
            ));
        }
        if self.latent_channels == 0 || self.base_channels == 0 || self.attn_dim == 0 || self.embed_dim == 0 {
            return bad("widths must be positive".into());
        }
        if self.norm_groups == 0 || !self.base_channels.is_multiple_of(self.norm_groups) || self.guider_channels == 0 {
            return bad("base_channels must be divisible by norm_groups".into());
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return bad(format!("betas must satisfy 0 < start <= end < 1, got {} {}", self.beta_start, self.beta_end));
        }
        if self.fps_out == 0 {
            return bad("fps_out must be positive".into());
        }
        if !(self.margin_ratio.is_finite() && self.margin_ratio >= 0.0 && self.learning_rate > 0.0) {
            return bad("margin_ratio must be >= 0 and learning_rate > 0".into());
        }
        Ok(())
    }
}
