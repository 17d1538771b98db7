//! Noise-prediction training on pose-annotated clips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::autograd::{Graph, Var};
use super::model::{AnimationModel, TemporalMode};
use super::nn::Bound;
use super::optim::Adam;
use super::schedule::add_noise;
use super::tensor::Tensor;
use super::EngineError;
use crate::conditioning::{locate_face, mask_reference, sample_motion_window, stack_reference, MotionWindow};
use crate::pose::{render_pose_map, PoseSequence, RenderStyle};
use crate::RgbFrame;

/// Video frames with one pose frame per video frame.
#[derive(Clone, Debug)]
pub struct TrainClip {
    pub frames: Vec<RgbFrame>,
    pub pose: PoseSequence,
}

impl TrainClip {
    pub fn new(frames: Vec<RgbFrame>, pose: PoseSequence) -> Result<Self, EngineError> {
        if frames.is_empty() || frames.len() != pose.len() {
            return Err(EngineError::shape(format!("{} frames but {} pose frames", frames.len(), pose.len())));
        }
        Ok(Self { frames, pose })
    }
}

/// Network inputs for one training window, as tensors.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub(crate) stack_latents: Tensor,
    pub(crate) embedding: Tensor,
    pub(crate) pose: Tensor,
    pub(crate) mask: Tensor,
    pub(crate) targets: Tensor,
}

impl TrainSample {
    /// Window of `clip_len` frames starting at `start`. Frame 0 is the
    /// reference; motion frames are the `n_motion` frames before `start`, or
    /// copies of the reference when the window starts too early.
    pub fn from_clip(model: &AnimationModel, clip: &TrainClip, start: usize) -> Result<Self, EngineError> {
        let cfg = model.config();
        let len = cfg.clip_len;
        if start + len > clip.frames.len() {
            return Err(EngineError::shape(format!(
                "window [{start}, {}) exceeds clip of {} frames",
                start + len,
                clip.frames.len()
            )));
        }
        let size = cfg.image_size;
        let reference = &clip.frames[0];
        model.check_frame(reference, "training frame")?;
        let window = if start >= cfg.n_motion {
            sample_motion_window(&clip.frames, start - cfg.n_motion, cfg.n_motion)?
        } else {
            MotionWindow::repeated(reference, cfg.n_motion, "reference")
        };
        let stack = stack_reference(reference, &window)?;
        let region = locate_face(&clip.pose.frames()[0], cfg.margin_ratio, size, size)?;
        let masked = mask_reference(reference, &region)?;
        let style = RenderStyle::default();
        let maps = clip.pose.frames()[start..start + len]
            .iter()
            .map(|p| render_pose_map(p, size, size, &style))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            stack_latents: model.stack_latents(&stack)?,
            embedding: model.image_embedding(reference),
            pose: model.pose_tensor(&maps)?,
            mask: model.mask_tensor(&masked)?,
            targets: model.codec.encode_frames(&model.params, &clip.frames[start..start + len])?,
        })
    }

    pub fn frames(&self) -> usize {
        self.targets.dim(0)
    }
}

/// Builds the noise-prediction graph for `noisy` at step `t`.
pub(crate) fn eps_graph(
    model: &AnimationModel,
    g: &mut Graph,
    p: &Bound,
    sample: &TrainSample,
    noisy: Var,
    t: usize,
    temporal: TemporalMode,
) -> Var {
    let z = g.constant(sample.stack_latents.clone());
    let refs = model.reference_net.forward(g, p, z);
    let pose = g.constant(sample.pose.clone());
    let pose = model.pose_guider.forward(g, p, pose);
    let mask = g.constant(sample.mask.clone());
    let mask = model.mask_encoder.forward(g, p, mask);
    let emb = g.constant(sample.embedding.clone());
    model.unet.forward(g, p, noisy, t as f64, &refs, emb, pose, mask, temporal)
}

/// Noise-prediction loss at a given step and noise draw, without updating.
pub fn sample_loss(model: &AnimationModel, sample: &TrainSample, t: usize, eps: &Tensor) -> Result<f64, EngineError> {
    let noisy = add_noise(&sample.targets, eps, t, model.schedule())?;
    let mut g = Graph::inference();
    let p = model.params.bind(&mut g, false);
    let x = g.constant(noisy);
    let out = eps_graph(model, &mut g, &p, sample, x, t, TemporalMode::Softmax);
    let target = g.constant(eps.clone());
    let loss = g.mse(out, target);
    Ok(g.value(loss).item())
}

/// Loss and its gradient for every parameter, keyed by parameter name.
pub fn loss_gradients(
    model: &AnimationModel,
    sample: &TrainSample,
    t: usize,
    eps: &Tensor,
) -> Result<(f64, Vec<(String, Tensor)>), EngineError> {
    let noisy = add_noise(&sample.targets, eps, t, model.schedule())?;
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let x = g.constant(noisy);
    let out = eps_graph(model, &mut g, &p, sample, x, t, TemporalMode::Softmax);
    let target = g.constant(eps.clone());
    let loss = g.mse(out, target);
    let value = g.value(loss).item();
    let grads = g.backward(loss);
    let named = model
        .params
        .ids()
        .map(|id| {
            let grad = grads.get(p.var(id)).cloned().unwrap_or_else(|| Tensor::zeros(model.params.get(id).shape()));
            (model.params.name(id).to_string(), grad)
        })
        .collect();
    Ok((value, named))
}

pub struct Trainer {
    model: AnimationModel,
    opt: Adam,
    rng: ChaCha8Rng,
    history: Vec<f64>,
}

impl Trainer {
    pub fn new(model: AnimationModel) -> Self {
        let opt = Adam::new(model.config().learning_rate);
        let rng = ChaCha8Rng::seed_from_u64(model.config().seed.wrapping_add(1));
        Self { model, opt, rng, history: Vec::new() }
    }

    pub fn model(&self) -> &AnimationModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut AnimationModel {
        &mut self.model
    }

    pub fn into_model(self) -> AnimationModel {
        self.model
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// One optimizer step at a uniformly drawn timestep. Parameters are left
    /// untouched when the loss is not finite.
    pub fn train_step(&mut self, sample: &TrainSample) -> Result<f64, EngineError> {
        let t = self.rng.random_range(0..self.model.schedule().len());
        let eps = Tensor::randn(sample.targets.shape(), 1.0, &mut self.rng);
        let noisy = add_noise(&sample.targets, &eps, t, self.model.schedule())?;
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g, true);
        let x = g.constant(noisy);
        let out = eps_graph(&self.model, &mut g, &p, sample, x, t, TemporalMode::Softmax);
        let target = g.constant(eps);
        let loss_var = g.mse(out, target);
        let loss = g.value(loss_var).item();
        if !loss.is_finite() {
            return Err(EngineError::NonFiniteLoss(loss));
        }
        let grads = g.backward(loss_var);
        self.opt.step(&mut self.model.params, &p, &grads);
        self.history.push(loss);
        Ok(loss)
    }

    /// Fits the learned codec to reconstruct `frames`. Returns the final
    /// reconstruction MSE; a lossless codec needs no fitting and returns 0.
    pub fn fit_codec(&mut self, frames: &[RgbFrame], steps: usize) -> Result<f64, EngineError> {
        let super::codec::LatentCodec::Learned { net, .. } = self.model.codec.clone() else {
            return Ok(0.0);
        };
        let pixels = super::codec::frames_to_tensor(frames)?;
        let mut opt = Adam::new(self.model.config().learning_rate * 5.0);
        let mut last = f64::NAN;
        for _ in 0..steps.max(1) {
            let mut g = Graph::new();
            let p = self.model.params.bind(&mut g, true);
            let x = g.constant(pixels.clone());
            let z = net.encode_graph(&mut g, &p, x);
            let y = net.decode_graph(&mut g, &p, z);
            let loss = g.mse(y, x);
            last = g.value(loss).item();
            if !last.is_finite() {
                return Err(EngineError::NonFiniteLoss(last));
            }
            let grads = g.backward(loss);
            opt.step(&mut self.model.params, &p, &grads);
        }
        Ok(last)
    }
}
