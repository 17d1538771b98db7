//! The animation network: reference net, denoising UNet, pose guider and
//! face-mask encoder sharing one parameter store.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::autograd::{Graph, Var};
use super::codec::{frames_to_tensor, LatentCodec, LearnedCodec};
use super::config::{CodecKind, EngineConfig};
use super::embed::{ImageEncoder, RandomProjectionEncoder};
use super::nn::{timestep_embedding, Bound, Conv2d, Linear, MixMode, Norm, ParamStore, ResBlock, TransformerBlock};
use super::schedule::{make_schedule, NoiseSchedule};
use super::tensor::Tensor;
use super::EngineError;
use crate::conditioning::{MaskedReference, ReferenceStack};
use crate::pose::PoseMap;
use crate::RgbFrame;

pub use super::nn::MixMode as TemporalMode;

/// Lightweight CNN from pixels to latent resolution. The final 1x1 layer
/// starts at zero so the branch contributes nothing until trained.
#[derive(Clone, Debug)]
pub struct Guider {
    conv_in: Conv2d,
    downs: Vec<Conv2d>,
    out: Conv2d,
}

impl Guider {
    fn new(store: &mut ParamStore, name: &str, cfg: &EngineConfig, rng: &mut ChaCha8Rng) -> Self {
        let stages = cfg.latent_down.trailing_zeros() as usize;
        let mut width = cfg.guider_channels;
        let conv_in = Conv2d::new(store, &format!("{name}.conv_in"), 3, width, 3, 1, rng, false);
        let downs = (0..stages)
            .map(|i| {
                let next = cfg.guider_channels << (i + 1);
                let c = Conv2d::new(store, &format!("{name}.down{i}"), width, next, 3, 2, rng, false);
                width = next;
                c
            })
            .collect();
        let out = Conv2d::new(store, &format!("{name}.out"), width, cfg.latent_channels, 1, 1, rng, true);
        Self { conv_in, downs, out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut h = self.conv_in.forward(g, p, x);
        h = g.silu(h);
        for d in &self.downs {
            h = d.forward(g, p, h);
            h = g.silu(h);
        }
        self.out.forward(g, p, h)
    }

    pub fn output_layer(&self) -> Conv2d {
        self.out
    }
}

/// Twin encoder for the reference stack; its per-level hidden states are the
/// reference features.
#[derive(Clone, Debug)]
pub struct ReferenceNet {
    conv_in: Conv2d,
    res0: ResBlock,
    attn0: TransformerBlock,
    down: Conv2d,
    res1: ResBlock,
}

impl ReferenceNet {
    fn new(store: &mut ParamStore, cfg: &EngineConfig, rng: &mut ChaCha8Rng) -> Self {
        let (c0, c1) = (cfg.base_channels, cfg.base_channels * 2);
        let c_in = cfg.latent_channels * (cfg.n_motion + 1);
        Self {
            conv_in: Conv2d::new(store, "refnet.conv_in", c_in, c0, 3, 1, rng, false),
            res0: ResBlock::new(store, "refnet.res0", c0, c0, cfg.norm_groups, None, rng),
            attn0: TransformerBlock::new(store, "refnet.attn0", c0, cfg.embed_dim, cfg.attn_dim, false, false, rng),
            down: Conv2d::new(store, "refnet.down", c0, c1, 3, 2, rng, false),
            res1: ResBlock::new(store, "refnet.res1", c1, c1, cfg.norm_groups, None, rng),
        }
    }

    /// `z: [1, c_latent * (n + 1), h, w]` to features at `h` and `h / 2`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, z: Var) -> Vec<Var> {
        let h = self.conv_in.forward(g, p, z);
        let f0 = self.res0.forward(g, p, h, None);
        let h = self.attn0.forward(g, p, f0, None, None, MixMode::Softmax);
        let h = self.down.forward(g, p, h);
        let f1 = self.res1.forward(g, p, h, None);
        vec![f0, f1]
    }
}

/// Two-level video UNet predicting noise.
#[derive(Clone, Debug)]
pub struct DenoisingUnet {
    time1: Linear,
    time2: Linear,
    conv_in: Conv2d,
    res0: ResBlock,
    tb0: TransformerBlock,
    down: Conv2d,
    res1: ResBlock,
    tb1: TransformerBlock,
    res_up: ResBlock,
    norm_out: Norm,
    conv_out: Conv2d,
    time_width: usize,
}

impl DenoisingUnet {
    fn new(store: &mut ParamStore, cfg: &EngineConfig, rng: &mut ChaCha8Rng) -> Self {
        let (c0, c1) = (cfg.base_channels, cfg.base_channels * 2);
        let td = 4 * c0;
        let lc = cfg.latent_channels;
        // the output head also sees the raw noisy latents
        let conv_out = Conv2d::new(store, "unet.conv_out", c0 + lc, lc, 3, 1, rng, false);
        // small output layer: the initial prediction is close to zero
        let w = store.get_mut(conv_out.weight);
        *w = w.map(|v| v * 0.1);
        Self {
            time1: Linear::new(store, "unet.time1", c0, td, true, rng),
            time2: Linear::new(store, "unet.time2", td, td, true, rng),
            conv_in: Conv2d::new(store, "unet.conv_in", lc, c0, 3, 1, rng, false),
            res0: ResBlock::new(store, "unet.res0", c0, c0, cfg.norm_groups, Some(td), rng),
            tb0: TransformerBlock::new(store, "unet.tb0", c0, cfg.embed_dim, cfg.attn_dim, true, true, rng),
            down: Conv2d::new(store, "unet.down", c0, c1, 3, 2, rng, false),
            res1: ResBlock::new(store, "unet.res1", c1, c1, cfg.norm_groups, Some(td), rng),
            tb1: TransformerBlock::new(store, "unet.tb1", c1, cfg.embed_dim, cfg.attn_dim, true, true, rng),
            res_up: ResBlock::new(store, "unet.res_up", c1 + c0, c0, cfg.norm_groups, Some(td), rng),
            norm_out: Norm::group(store, "unet.norm_out", c0, cfg.norm_groups),
            conv_out,
            time_width: c0,
        }
    }

    /// Noise prediction for `noisy: [f, c, h, w]`. `pose: [f, c, h, w]` and
    /// `facemask: [1, c, h, w]` are added to the input; `refs` join spatial
    /// attention; `embedding: [1, 1, d]` drives cross-attention.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        noisy: Var,
        t: f64,
        refs: &[Var],
        embedding: Var,
        pose: Var,
        facemask: Var,
        temporal: MixMode,
    ) -> Var {
        let frames = g.shape(noisy)[0];
        let temb = g.constant(timestep_embedding(t, self.time_width));
        let temb = self.time1.forward(g, p, temb);
        let temb = g.silu(temb);
        let temb = self.time2.forward(g, p, temb);
        let temb = g.silu(temb);

        let mask = g.repeat0(facemask, frames);
        let x = g.add(noisy, pose);
        let x = g.add(x, mask);

        let h = self.conv_in.forward(g, p, x);
        let h = self.res0.forward(g, p, h, Some(temb));
        let skip = self.tb0.forward(g, p, h, Some(refs[0]), Some(embedding), temporal);
        let h = self.down.forward(g, p, skip);
        let h = self.res1.forward(g, p, h, Some(temb));
        let h = self.tb1.forward(g, p, h, Some(refs[1]), Some(embedding), temporal);
        let h = g.upsample2(h);
        let h = g.concat(&[h, skip], 1);
        let h = self.res_up.forward(g, p, h, Some(temb));
        let h = self.norm_out.forward(g, p, h);
        let h = g.silu(h);
        let h = g.concat(&[h, noisy], 1);
        self.conv_out.forward(g, p, h)
    }

    pub fn attention_block(&self) -> &TransformerBlock {
        &self.tb1
    }
}

/// Per-generation conditioning, all at latent resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningBundle {
    /// `[1, c0, h, w]` and `[1, 2 c0, h/2, w/2]`.
    pub reference_features: Vec<Tensor>,
    /// `[1, 1, d]`.
    pub image_embedding: Tensor,
    /// `[f, c, h, w]`.
    pub pose_latents: Tensor,
    /// `[1, c, h, w]`, broadcast over frames.
    pub facemask_latents: Tensor,
}

#[derive(Clone)]
pub struct AnimationModel {
    pub(crate) config: EngineConfig,
    pub(crate) params: ParamStore,
    pub(crate) codec: LatentCodec,
    pub(crate) schedule: NoiseSchedule,
    pub(crate) encoder: Arc<dyn ImageEncoder>,
    pub(crate) reference_net: ReferenceNet,
    pub(crate) unet: DenoisingUnet,
    pub(crate) pose_guider: Guider,
    pub(crate) mask_encoder: Guider,
}

impl std::fmt::Debug for AnimationModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnimationModel")
            .field("config", &self.config)
            .field("parameters", &self.params.num_values())
            .finish()
    }
}

impl AnimationModel {
    /// Fresh weights drawn from `config.seed`.
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let codec = match config.codec {
            CodecKind::Lossless => LatentCodec::Lossless { factor: config.latent_down },
            CodecKind::Learned => LatentCodec::Learned {
                factor: config.latent_down,
                net: LearnedCodec::new(&mut params, config.latent_down, config.latent_channels, &mut rng),
            },
        };
        let reference_net = ReferenceNet::new(&mut params, &config, &mut rng);
        let unet = DenoisingUnet::new(&mut params, &config, &mut rng);
        let pose_guider = Guider::new(&mut params, "pose_guider", &config, &mut rng);
        let mask_encoder = Guider::new(&mut params, "mask_encoder", &config, &mut rng);
        let schedule = make_schedule(config.train_timesteps, config.beta_start, config.beta_end)?;
        let encoder = Arc::new(RandomProjectionEncoder::new(config.embed_dim, 8, config.seed ^ 0x5eed));
        Ok(Self { config, params, codec, schedule, encoder, reference_net, unet, pose_guider, mask_encoder })
    }

    /// Replaces the image encoder; its width must equal `embed_dim`.
    pub fn with_encoder(mut self, encoder: Arc<dyn ImageEncoder>) -> Result<Self, EngineError> {
        if encoder.dim() != self.config.embed_dim {
            return Err(EngineError::BadConfig(format!(
                "encoder width {} != embed_dim {}",
                encoder.dim(),
                self.config.embed_dim
            )));
        }
        self.encoder = encoder;
        Ok(self)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn codec(&self) -> &LatentCodec {
        &self.codec
    }

    pub fn pose_guider(&self) -> &Guider {
        &self.pose_guider
    }

    pub fn mask_encoder(&self) -> &Guider {
        &self.mask_encoder
    }

    pub fn unet(&self) -> &DenoisingUnet {
        &self.unet
    }

    pub fn latent_shape(&self, frames: usize) -> [usize; 4] {
        let s = self.config.latent_size();
        [frames, self.config.latent_channels, s, s]
    }

    pub(crate) fn check_frame(&self, f: &RgbFrame, what: &str) -> Result<(), EngineError> {
        let n = self.config.image_size;
        if f.dims() != (n, n) {
            return Err(EngineError::shape(format!("{what} is {:?}, model expects {n}x{n}", f.dims())));
        }
        Ok(())
    }

    /// Encodes every slot of the stack and concatenates the latents along
    /// channels, `[1, c * (n + 1), h, w]`.
    pub(crate) fn stack_latents(&self, stack: &ReferenceStack) -> Result<Tensor, EngineError> {
        let expected = 3 * (self.config.n_motion + 1);
        if stack.channels() != expected {
            return Err(EngineError::shape(format!(
                "reference stack has {} channels, model with n_motion={} takes {expected}",
                stack.channels(),
                self.config.n_motion
            )));
        }
        let n = self.config.image_size;
        if (stack.width(), stack.height()) != (n, n) {
            return Err(EngineError::shape(format!(
                "reference stack is {}x{}, expected {n}x{n}",
                stack.width(),
                stack.height()
            )));
        }
        let slots = Tensor::new(&[stack.channels() / 3, 3, n, n], stack.data().to_vec())?;
        let z = self.codec.encode(&self.params, &slots)?;
        let s = z.shape().to_vec();
        z.reshape(&[1, s[0] * s[1], s[2], s[3]])
    }

    pub(crate) fn pose_tensor(&self, maps: &[PoseMap]) -> Result<Tensor, EngineError> {
        for m in maps {
            self.check_frame(m.frame(), "pose map")?;
        }
        frames_to_tensor(&maps.iter().map(|m| m.frame().clone()).collect::<Vec<_>>())
    }

    pub(crate) fn mask_tensor(&self, masked: &MaskedReference) -> Result<Tensor, EngineError> {
        self.check_frame(masked.frame(), "masked reference")?;
        frames_to_tensor(std::slice::from_ref(masked.frame()))
    }

    pub fn reference_features(&self, stack: &ReferenceStack) -> Result<Vec<Tensor>, EngineError> {
        let z = self.stack_latents(stack)?;
        let mut g = Graph::inference();
        let p = self.params.bind(&mut g, false);
        let z = g.constant(z);
        let feats = self.reference_net.forward(&mut g, &p, z);
        Ok(feats.into_iter().map(|f| g.value(f).clone()).collect())
    }

    pub fn pose_guide(&self, maps: &[PoseMap]) -> Result<Tensor, EngineError> {
        let x = self.pose_tensor(maps)?;
        let mut g = Graph::inference();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(x);
        let out = self.pose_guider.forward(&mut g, &p, x);
        Ok(g.take_value(out))
    }

    pub fn facemask_guide(&self, masked: &MaskedReference) -> Result<Tensor, EngineError> {
        let x = self.mask_tensor(masked)?;
        let mut g = Graph::inference();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(x);
        let out = self.mask_encoder.forward(&mut g, &p, x);
        Ok(g.take_value(out))
    }

    pub fn image_embedding(&self, reference: &RgbFrame) -> Tensor {
        let d = self.encoder.dim();
        Tensor::from_parts(vec![1, 1, d], self.encoder.embed(reference))
    }

    pub fn prepare(
        &self,
        stack: &ReferenceStack,
        reference: &RgbFrame,
        pose_maps: &[PoseMap],
        masked: &MaskedReference,
    ) -> Result<ConditioningBundle, EngineError> {
        Ok(ConditioningBundle {
            reference_features: self.reference_features(stack)?,
            image_embedding: self.image_embedding(reference),
            pose_latents: self.pose_guide(pose_maps)?,
            facemask_latents: self.facemask_guide(masked)?,
        })
    }

    fn check_bundle(&self, noisy: &Tensor, b: &ConditioningBundle) -> Result<(), EngineError> {
        let frames = noisy.shape().first().copied().unwrap_or(0);
        let want = self.latent_shape(frames);
        let s = want[2];
        let (c0, c1) = (self.config.base_channels, 2 * self.config.base_channels);
        let checks: [(&str, &[usize], Vec<usize>); 6] = [
            ("noisy latents", noisy.shape(), want.to_vec()),
            ("pose latents", b.pose_latents.shape(), want.to_vec()),
            ("face-mask latents", b.facemask_latents.shape(), vec![1, want[1], s, s]),
            ("image embedding", b.image_embedding.shape(), vec![1, 1, self.config.embed_dim]),
            ("reference level 0", b.reference_features.first().map(Tensor::shape).unwrap_or(&[]), vec![1, c0, s, s]),
            (
                "reference level 1",
                b.reference_features.get(1).map(Tensor::shape).unwrap_or(&[]),
                vec![1, c1, s / 2, s / 2],
            ),
        ];
        for (what, got, want) in checks {
            if got != want.as_slice() || frames == 0 {
                return Err(EngineError::shape(format!("{what}: got {got:?}, expected {want:?}")));
            }
        }
        Ok(())
    }

    /// Noise prediction for `noisy: [f, c, h, w]` at step `t`.
    pub fn denoise(&self, noisy: &Tensor, t: usize, bundle: &ConditioningBundle) -> Result<Tensor, EngineError> {
        self.denoise_with(noisy, t, bundle, TemporalMode::Softmax)
    }

    pub fn denoise_with(
        &self,
        noisy: &Tensor,
        t: usize,
        bundle: &ConditioningBundle,
        temporal: TemporalMode,
    ) -> Result<Tensor, EngineError> {
        self.check_bundle(noisy, bundle)?;
        if t >= self.schedule.len() {
            return Err(EngineError::BadStep { t, steps: self.schedule.len() });
        }
        let mut g = Graph::inference();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(noisy.clone());
        let refs: Vec<Var> = bundle.reference_features.iter().map(|r| g.constant(r.clone())).collect();
        let emb = g.constant(bundle.image_embedding.clone());
        let pose = g.constant(bundle.pose_latents.clone());
        let mask = g.constant(bundle.facemask_latents.clone());
        let out = self.unet.forward(&mut g, &p, x, t as f64, &refs, emb, pose, mask, temporal);
        Ok(g.take_value(out))
    }
}
