//! Dual-UNet latent diffusion video generator.
//!
//! A reference net encodes the reference face stacked with motion frames;
//! its per-level features join the denoising UNet's spatial self-attention
//! as extra keys and values. Pose maps and the masked reference face are
//! encoded by small CNNs and added to the noisy latents. An image embedding
//! of the reference feeds cross-attention, and temporal attention mixes
//! information across frames at every spatial location.

pub mod autograd;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod embed;
pub mod generate;
pub mod kernels;
pub mod model;
pub mod nn;
pub mod optim;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Graph, Var};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use codec::LatentCodec;
pub use config::{CodecKind, EngineConfig, MotionInit};
pub use embed::{ImageEncoder, RandomProjectionEncoder};
pub use generate::{generate_video, generate_video_with, ClipRecord, GenerationOutput};
pub use model::{AnimationModel, ConditioningBundle, TemporalMode};
pub use optim::Adam;
pub use schedule::{add_noise, ddim_step, ddim_update, make_schedule, NoiseSchedule};
pub use tensor::Tensor;
pub use train::{loss_gradients, sample_loss, TrainClip, TrainSample, Trainer};

use thiserror::Error;

use crate::conditioning::ConditioningError;
use crate::pose::PoseError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad noise schedule: {0}")]
    BadSchedule(String),
    #[error("timestep {t} outside schedule of {steps} steps")]
    BadStep { t: usize, steps: usize },
    #[error("DDIM step must go backwards: t={t}, t_prev={t_prev}")]
    BadStepOrder { t: usize, t_prev: usize },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("NonFiniteLoss: training loss became {0}")]
    NonFiniteLoss(f64),
    #[error("NoFace: {0}")]
    NoFace(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Conditioning(ConditioningError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EngineError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Self::ShapeMismatch(msg.into())
    }
}

impl From<ConditioningError> for EngineError {
    fn from(e: ConditioningError) -> Self {
        match e {
            ConditioningError::NoFace(_) => Self::NoFace(e.to_string()),
            ConditioningError::ShapeMismatch { .. } => Self::ShapeMismatch(e.to_string()),
            other => Self::Conditioning(other),
        }
    }
}
