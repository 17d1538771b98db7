//! Clip-by-clip video generation with motion-frame stitching.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::MotionInit;
use super::model::AnimationModel;
use super::schedule::ddim_step;
use super::tensor::Tensor;
use super::EngineError;
use crate::conditioning::{locate_face, mask_reference, stack_reference, MotionWindow};
use crate::pose::{render_pose_map, LandmarkDetector, PoseError, PoseSequence, RenderStyle};
use crate::RgbFrame;

/// Where one generated clip sits in the output and what it was conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub start: usize,
    pub len: usize,
    pub motion_window: MotionWindow,
}

#[derive(Clone, Debug)]
pub struct GenerationOutput {
    pub frames: Vec<RgbFrame>,
    pub clips: Vec<ClipRecord>,
    /// Final denoised latents per clip, `[len, c, h, w]`.
    pub latents: Vec<Tensor>,
}

impl GenerationOutput {
    /// Little-endian dump of [`Self::latents`]: magic `PDLT`, clip count, then
    /// per clip the rank, dims and `f64` values.
    pub fn latent_dump(&self) -> Vec<u8> {
        let mut out = b"PDLT".to_vec();
        out.extend_from_slice(&(self.latents.len() as u64).to_le_bytes());
        for t in &self.latents {
            out.extend_from_slice(&(t.ndim() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// Animates `reference` along `pose`, one output frame per pose frame.
pub fn generate_video(
    model: &AnimationModel,
    reference: &RgbFrame,
    pose: &PoseSequence,
    detector: &dyn LandmarkDetector,
) -> Result<GenerationOutput, EngineError> {
    generate_video_with(model, reference, pose, detector, model.config().seed, &mut |_, _| {})
}

/// As [`generate_video`] with an explicit noise seed, calling
/// `progress(done, total)` after every clip.
pub fn generate_video_with(
    model: &AnimationModel,
    reference: &RgbFrame,
    pose: &PoseSequence,
    detector: &dyn LandmarkDetector,
    seed: u64,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<GenerationOutput, EngineError> {
    let cfg = model.config();
    let size = cfg.image_size;
    model.check_frame(reference, "reference")?;
    let landmarks = detector
        .detect(reference)
        .map_err(|e| PoseError::DetectorFailure(e.to_string()))?
        .ok_or_else(|| EngineError::NoFace("no landmarks detected on the reference image".into()))?;
    let region = locate_face(&landmarks, cfg.margin_ratio, size, size)?;
    let masked = mask_reference(reference, &region)?;

    let style = RenderStyle::default();
    let maps = pose.frames().iter().map(|p| render_pose_map(p, size, size, &style)).collect::<Result<Vec<_>, _>>()?;

    let embedding = model.image_embedding(reference);
    let facemask = model.facemask_guide(&masked)?;
    let timesteps = model.schedule().sampling_timesteps(cfg.sample_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let total = maps.len();
    let n = cfg.n_motion;
    let seed_frame = match cfg.motion_init {
        MotionInit::Reference => reference.clone(),
        MotionInit::Zeros => RgbFrame::black(size, size),
    };
    let mut frames: Vec<RgbFrame> = Vec::with_capacity(total);
    let mut clips = Vec::new();
    let mut latents = Vec::new();
    let mut start = 0;
    while start < total {
        let len = cfg.clip_len.min(total - start);
        let window = if start == 0 {
            let source = match cfg.motion_init {
                MotionInit::Reference => "reference",
                MotionInit::Zeros => "zeros",
            };
            MotionWindow::repeated(&seed_frame, n, source)
        } else {
            // earlier frames than exist are padded with the initial frame
            let from = start.saturating_sub(n);
            let mut w: Vec<RgbFrame> = vec![seed_frame.clone(); n - (start - from)];
            w.extend_from_slice(&frames[from..start]);
            MotionWindow::new(w, "generated", from)
        };
        let stack = stack_reference(reference, &window)?;
        let bundle = super::model::ConditioningBundle {
            reference_features: model.reference_features(&stack)?,
            image_embedding: embedding.clone(),
            pose_latents: model.pose_guide(&maps[start..start + len])?,
            facemask_latents: facemask.clone(),
        };
        let mut x = Tensor::randn(&model.latent_shape(len), 1.0, &mut rng);
        for (i, &t) in timesteps.iter().enumerate() {
            let eps = model.denoise(&x, t, &bundle)?;
            x = ddim_step(&x, &eps, t, timesteps.get(i + 1).copied(), model.schedule())?;
        }
        frames.extend(model.codec().decode_frames(model.params(), &x)?);
        clips.push(ClipRecord { start, len, motion_window: window });
        latents.push(x);
        start += len;
        progress(start, total);
    }
    Ok(GenerationOutput { frames, clips, latents })
}
