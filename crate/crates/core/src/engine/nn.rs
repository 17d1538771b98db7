//! Parameter storage and the layers the networks are built from.

use std::collections::HashMap;

use rand::Rng;

use super::autograd::{Graph, Var};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.names.iter().enumerate().filter(move |(_, n)| n.starts_with(prefix)).map(|(i, _)| ParamId(i))
    }

    /// Loads every parameter into `g`, trainable or constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars =
            self.tensors.iter().map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) }).collect();
        Bound { vars }
    }

    /// Adds Gaussian noise of `std` to every value.
    pub fn perturb(&mut self, std: f64, rng: &mut impl Rng) {
        for t in &mut self.tensors {
            let noise = Tensor::randn(t.shape(), std, rng);
            t.add_assign(&noise);
        }
    }
}

/// Graph handles for a [`ParamStore`], indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
        zero: bool,
    ) -> Self {
        let std = if zero { 0.0 } else { (1.0 / (c_in * k * k) as f64).sqrt() };
        let w = if zero { Tensor::zeros(&[c_out, c_in, k, k]) } else { Tensor::randn(&[c_out, c_in, k, k], std, rng) };
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])),
            stride,
            pad: k / 2,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.conv2d(x, p[self.weight], p[self.bias], self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Self::with_std(store, name, d_in, d_out, bias, (1.0 / d_in as f64).sqrt(), rng)
    }

    pub fn with_std(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), Tensor::randn(&[d_in, d_out], std, rng)),
            bias: bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]))),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let y = g.matmul(x, p[self.weight]);
        match self.bias {
            Some(b) => {
                let axis = g.shape(y).len() - 1;
                g.add_bias(y, p[b], axis)
            }
            None => y,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// 0 means layer norm over the last axis.
    pub groups: usize,
}

impl Norm {
    pub fn group(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        Self::make(store, name, channels, groups)
    }

    pub fn layer(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self::make(store, name, width, 0)
    }

    fn make(store: &mut ParamStore, name: &str, c: usize, groups: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c])),
            groups,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        if self.groups == 0 {
            g.layer_norm(x, p[self.gamma], p[self.beta], 1e-5)
        } else {
            g.group_norm(x, self.groups, p[self.gamma], p[self.beta], 1e-5)
        }
    }
}

/// Pre-norm residual conv block with optional timestep FiLM.
#[derive(Clone, Copy, Debug)]
pub struct ResBlock {
    norm1: Norm,
    conv1: Conv2d,
    norm2: Norm,
    conv2: Conv2d,
    time: Option<Linear>,
    skip: Option<Conv2d>,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        groups: usize,
        time_dim: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            norm1: Norm::group(store, &format!("{name}.norm1"), c_in, gcd(groups, c_in)),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), c_in, c_out, 3, 1, rng, false),
            norm2: Norm::group(store, &format!("{name}.norm2"), c_out, gcd(groups, c_out)),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), c_out, c_out, 3, 1, rng, false),
            time: time_dim.map(|d| Linear::with_std(store, &format!("{name}.time"), d, 2 * c_out, true, 0.02, rng)),
            skip: (c_in != c_out).then(|| Conv2d::new(store, &format!("{name}.skip"), c_in, c_out, 1, 1, rng, false)),
        }
    }

    /// `temb` is the already-activated timestep embedding, `[1, d]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, temb: Option<Var>) -> Var {
        let h = self.norm1.forward(g, p, x);
        let h = g.silu(h);
        let h = self.conv1.forward(g, p, h);
        let mut h = self.norm2.forward(g, p, h);
        if let (Some(lin), Some(t)) = (self.time, temb) {
            let ss = lin.forward(g, p, t);
            let c = g.shape(ss)[1] / 2;
            let scale = g.narrow(ss, 1, 0, c);
            let shift = g.narrow(ss, 1, c, c);
            h = g.film(h, scale, shift);
        }
        let h = g.silu(h);
        let h = self.conv2.forward(g, p, h);
        let skip = match self.skip {
            Some(s) => s.forward(g, p, x),
            None => x,
        };
        g.add(skip, h)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// How temporal attention mixes frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixMode {
    Softmax,
    /// Each query attends only to itself: output is the value projection.
    Identity,
}

/// Single-head pre-norm attention with a residual connection.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    norm: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    dim: usize,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        ctx_width: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            norm: Norm::layer(store, &format!("{name}.norm"), width),
            q: Linear::new(store, &format!("{name}.q"), width, dim, false, rng),
            k: Linear::new(store, &format!("{name}.k"), ctx_width, dim, false, rng),
            v: Linear::new(store, &format!("{name}.v"), ctx_width, dim, false, rng),
            out: Linear::with_std(store, &format!("{name}.out"), dim, width, true, 0.5 / (dim as f64).sqrt(), rng),
            dim,
        }
    }

    /// `x: [b, l, width]`. Keys and values come from `context` when given
    /// (cross-attention), otherwise from the normalized tokens, with `extra`
    /// tokens `[b, m, width]` appended before normalization.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        extra: Option<Var>,
        context: Option<Var>,
        mode: MixMode,
    ) -> Var {
        let xn = self.norm.forward(g, p, x);
        let mixed = if mode == MixMode::Identity && context.is_none() && extra.is_none() {
            self.v.forward(g, p, xn)
        } else {
            let kv_src = match (context, extra) {
                (Some(c), _) => c,
                (None, Some(e)) => {
                    let en = self.norm.forward(g, p, e);
                    g.concat(&[xn, en], 1)
                }
                (None, None) => xn,
            };
            let q = self.q.forward(g, p, xn);
            let k = self.k.forward(g, p, kv_src);
            let v = self.v.forward(g, p, kv_src);
            let scores = g.bmm(q, k, true);
            let scores = g.scale(scores, 1.0 / (self.dim as f64).sqrt());
            let attn = g.softmax_last(scores);
            g.bmm(attn, v, false)
        };
        let o = self.out.forward(g, p, mixed);
        g.add(x, o)
    }
}

/// Spatial self-attention (optionally joined by reference tokens),
/// cross-attention to an embedding, and temporal attention.
#[derive(Clone, Copy, Debug)]
pub struct TransformerBlock {
    pub spatial: Attention,
    pub cross: Option<Attention>,
    pub temporal: Option<Attention>,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        embed_dim: usize,
        attn_dim: usize,
        cross: bool,
        temporal: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            spatial: Attention::new(store, &format!("{name}.spatial"), width, width, attn_dim, rng),
            cross: cross.then(|| Attention::new(store, &format!("{name}.cross"), width, embed_dim, attn_dim, rng)),
            temporal: temporal.then(|| Attention::new(store, &format!("{name}.temporal"), width, width, attn_dim, rng)),
        }
    }

    /// `x: [f, c, h, w]`; `reference: [1, c, h, w]`; `embedding: [1, 1, d]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        reference: Option<Var>,
        embedding: Option<Var>,
        temporal_mode: MixMode,
    ) -> Var {
        let s = g.shape(x).to_vec();
        let (f, c, h, w) = (s[0], s[1], s[2], s[3]);
        let tokens = to_tokens(g, x);
        let extra = reference.map(|r| {
            let rt = to_tokens(g, r);
            g.repeat0(rt, f)
        });
        let mut t = self.spatial.forward(g, p, tokens, extra, None, MixMode::Softmax);
        if let (Some(cross), Some(e)) = (self.cross, embedding) {
            let ctx = g.repeat0(e, f);
            t = cross.forward(g, p, t, None, Some(ctx), MixMode::Softmax);
        }
        if let Some(temporal) = self.temporal {
            let tf = g.permute(t, &[1, 0, 2]); // [hw, f, c]
            let tf = temporal.forward(g, p, tf, None, None, temporal_mode);
            t = g.permute(tf, &[1, 0, 2]);
        }
        let t = g.reshape(t, &[f, h, w, c]);
        g.permute(t, &[0, 3, 1, 2])
    }
}

/// `[n, c, h, w] -> [n, h*w, c]`.
pub fn to_tokens(g: &mut Graph, x: Var) -> Var {
    let s = g.shape(x).to_vec();
    let t = g.permute(x, &[0, 2, 3, 1]);
    g.reshape(t, &[s[0], s[2] * s[3], s[1]])
}

/// Sinusoidal embedding of a diffusion timestep, `[1, dim]`.
pub fn timestep_embedding(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        v[i] = (t * freq).sin();
        v[half + i] = (t * freq).cos();
    }
    Tensor::from_parts(vec![1, dim], v)
}
