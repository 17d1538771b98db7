//! Pixel <-> latent codecs.

use rand::Rng;

use super::autograd::{Graph, Var};
use super::nn::{Bound, Conv2d, ParamStore};
use super::tensor::Tensor;
use super::EngineError;
use crate::RgbFrame;

/// Stacks frames channel-planar into `[n, 3, h, w]`.
pub fn frames_to_tensor(frames: &[RgbFrame]) -> Result<Tensor, EngineError> {
    let first = frames.first().ok_or_else(|| EngineError::shape("no frames"))?;
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(frames.len() * 3 * w * h);
    for f in frames {
        if f.dims() != (w, h) {
            return Err(EngineError::shape(format!("frame {:?} vs {:?}", f.dims(), (w, h))));
        }
        data.extend(f.to_planar());
    }
    Tensor::new(&[frames.len(), 3, h, w], data)
}

/// Inverse of [`frames_to_tensor`]; values are not clamped.
pub fn tensor_to_frames(t: &Tensor) -> Result<Vec<RgbFrame>, EngineError> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(EngineError::shape(format!("expected [n, 3, h, w], got {s:?}")));
    }
    let plane = 3 * s[2] * s[3];
    t.data()
        .chunks_exact(plane)
        .map(|c| RgbFrame::from_planar(s[3], s[2], c).map_err(|e| EngineError::shape(e.to_string())))
        .collect()
}

/// `[n, c, h, w] -> [n, c*f*f, h/f, w/f]`, output channel `(c*f + dy)*f + dx`.
pub fn space_to_depth(x: &Tensor, f: usize) -> Result<Tensor, EngineError> {
    let s = x.shape();
    if s.len() != 4 || !s[2].is_multiple_of(f) || !s[3].is_multiple_of(f) {
        return Err(EngineError::shape(format!("{s:?} not divisible by factor {f}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (h / f, w / f);
    let mut out = vec![0.0; x.numel()];
    let src = x.data();
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let oc = (ch * f + y % f) * f + xx % f;
                    out[((b * c * f * f + oc) * ho + y / f) * wo + xx / f] = src[((b * c + ch) * h + y) * w + xx];
                }
            }
        }
    }
    Tensor::new(&[n, c * f * f, ho, wo], out)
}

pub fn depth_to_space(x: &Tensor, f: usize) -> Result<Tensor, EngineError> {
    let s = x.shape();
    if s.len() != 4 || !s[1].is_multiple_of(f * f) {
        return Err(EngineError::shape(format!("{s:?} channels not divisible by {}", f * f)));
    }
    let (n, cf, ho, wo) = (s[0], s[1], s[2], s[3]);
    let c = cf / (f * f);
    let (h, w) = (ho * f, wo * f);
    let mut out = vec![0.0; x.numel()];
    let src = x.data();
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let oc = (ch * f + y % f) * f + xx % f;
                    out[((b * c + ch) * h + y) * w + xx] = src[((b * cf + oc) * ho + y / f) * wo + xx / f];
                }
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Small convolutional autoencoder; every stage halves or doubles the side.
#[derive(Clone, Debug)]
pub struct LearnedCodec {
    enc_in: Conv2d,
    enc_down: Vec<Conv2d>,
    enc_out: Conv2d,
    dec_in: Conv2d,
    dec_up: Vec<Conv2d>,
    dec_out: Conv2d,
}

const CODEC_WIDTH: usize = 16;

impl LearnedCodec {
    pub fn new(store: &mut ParamStore, factor: usize, latent_channels: usize, rng: &mut impl Rng) -> Self {
        let stages = factor.trailing_zeros() as usize;
        let w = CODEC_WIDTH;
        Self {
            enc_in: Conv2d::new(store, "codec.enc_in", 3, w, 3, 1, rng, false),
            enc_down: (0..stages)
                .map(|i| Conv2d::new(store, &format!("codec.enc_down{i}"), w, w, 3, 2, rng, false))
                .collect(),
            enc_out: Conv2d::new(store, "codec.enc_out", w, latent_channels, 1, 1, rng, false),
            dec_in: Conv2d::new(store, "codec.dec_in", latent_channels, w, 3, 1, rng, false),
            dec_up: (0..stages)
                .map(|i| Conv2d::new(store, &format!("codec.dec_up{i}"), w, w, 3, 1, rng, false))
                .collect(),
            dec_out: Conv2d::new(store, "codec.dec_out", w, 3, 3, 1, rng, false),
        }
    }

    pub fn encode_graph(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut h = self.enc_in.forward(g, p, x);
        h = g.silu(h);
        for c in &self.enc_down {
            h = c.forward(g, p, h);
            h = g.silu(h);
        }
        self.enc_out.forward(g, p, h)
    }

    pub fn decode_graph(&self, g: &mut Graph, p: &Bound, z: Var) -> Var {
        let mut h = self.dec_in.forward(g, p, z);
        h = g.silu(h);
        for c in &self.dec_up {
            h = g.upsample2(h);
            h = c.forward(g, p, h);
            h = g.silu(h);
        }
        self.dec_out.forward(g, p, h)
    }
}

#[derive(Clone, Debug)]
pub enum LatentCodec {
    Lossless { factor: usize },
    Learned { factor: usize, net: LearnedCodec },
}

impl LatentCodec {
    pub fn factor(&self) -> usize {
        match self {
            Self::Lossless { factor } | Self::Learned { factor, .. } => *factor,
        }
    }

    /// `[n, 3, h, w]` pixels to `[n, c, h/f, w/f]` latents.
    pub fn encode(&self, params: &ParamStore, pixels: &Tensor) -> Result<Tensor, EngineError> {
        let f = self.factor();
        let s = pixels.shape();
        if s.len() != 4 || s[1] != 3 || !s[2].is_multiple_of(f) || !s[3].is_multiple_of(f) {
            return Err(EngineError::shape(format!("cannot encode {s:?} with factor {f}")));
        }
        match self {
            Self::Lossless { factor } => space_to_depth(pixels, *factor),
            Self::Learned { net, .. } => {
                let mut g = Graph::inference();
                let p = params.bind(&mut g, false);
                let x = g.constant(pixels.clone());
                let z = net.encode_graph(&mut g, &p, x);
                Ok(g.take_value(z))
            }
        }
    }

    pub fn decode(&self, params: &ParamStore, latents: &Tensor) -> Result<Tensor, EngineError> {
        if latents.ndim() != 4 {
            return Err(EngineError::shape(format!("latents must be 4-d, got {:?}", latents.shape())));
        }
        match self {
            Self::Lossless { factor } => depth_to_space(latents, *factor),
            Self::Learned { net, .. } => {
                let mut g = Graph::inference();
                let p = params.bind(&mut g, false);
                let z = g.constant(latents.clone());
                let x = net.decode_graph(&mut g, &p, z);
                Ok(g.take_value(x))
            }
        }
    }

    pub fn encode_frames(&self, params: &ParamStore, frames: &[RgbFrame]) -> Result<Tensor, EngineError> {
        self.encode(params, &frames_to_tensor(frames)?)
    }

    pub fn decode_frames(&self, params: &ParamStore, latents: &Tensor) -> Result<Vec<RgbFrame>, EngineError> {
        Ok(tensor_to_frames(&self.decode(params, latents)?)?.into_iter().map(RgbFrame::clamped).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lossless_latent_shape() {
        let codec = LatentCodec::Lossless { factor: 4 };
        let img = Tensor::zeros(&[1, 3, 64, 64]);
        let z = codec.encode(&ParamStore::new(), &img).unwrap();
        // 3 channels * 4 * 4 = 48 at 16x16
        assert_eq!(z.shape(), &[1, 48, 16, 16]);
    }

    #[test]
    fn lossless_rejects_indivisible() {
        let codec = LatentCodec::Lossless { factor: 4 };
        assert!(codec.encode(&ParamStore::new(), &Tensor::zeros(&[1, 3, 30, 32])).is_err());
    }

    #[test]
    fn space_to_depth_layout() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let z = space_to_depth(&x, 2).unwrap();
        assert_eq!(z.shape(), &[1, 4, 1, 1]);
        assert_eq!(z.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn learned_codec_shapes() {
        let mut store = ParamStore::new();
        let net = LearnedCodec::new(&mut store, 4, 4, &mut ChaCha8Rng::seed_from_u64(0));
        let codec = LatentCodec::Learned { factor: 4, net };
        let z = codec.encode(&store, &Tensor::zeros(&[2, 3, 32, 32])).unwrap();
        assert_eq!(z.shape(), &[2, 4, 8, 8]);
        assert_eq!(codec.decode(&store, &z).unwrap().shape(), &[2, 3, 32, 32]);
    }

    proptest! {
        #[test]
        fn lossless_round_trip_is_bit_exact(seed in 0u64..500, f in prop::sample::select(vec![1usize, 2, 4, 8])) {
            let x = Tensor::randn(&[2, 3, 16, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
            let codec = LatentCodec::Lossless { factor: f };
            let store = ParamStore::new();
            let back = codec.decode(&store, &codec.encode(&store, &x).unwrap()).unwrap();
            prop_assert!(back.bits_eq(&x));
        }
    }
}
