//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every op applied to its [`Var`]s together with a
//! backward closure. `backward` walks the tape in reverse and accumulates
//! gradients. Graphs built with [`Graph::inference`] keep values only.

use super::kernels::{self, ConvGeom, MatRef};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    back: Option<BackFn>,
    needs_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
}

/// Gradients from one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), record: true }
    }

    /// A graph that never records backward closures.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), record: false }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), back: None, needs_grad: needs_grad && self.record });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf; gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn push<F>(&mut self, value: Tensor, parents: Vec<Var>, back: F) -> Var
    where
        F: Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>> + 'static,
    {
        let needs_grad = self.record && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let back: Option<BackFn> = if needs_grad { Some(Box::new(back)) } else { None };
        self.nodes.push(Node { value, parents, back, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(back) = node.back.as_ref() else { continue };
            let Some(g) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let pgrads = back(&g, &inputs, &node.value);
            for (p, pg) in node.parents.iter().zip(pgrads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p.0].needs_grad {
                    continue;
                }
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
            // keep leaf gradients, drop intermediates once consumed
            grads[id] = if node.parents.is_empty() { Some(g) } else { None };
        }
        Gradients { grads }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, vec![a, b], |g, _, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, vec![a, b], |g, _, _| vec![Some(g.clone()), Some(g.map(|x| -x))])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, vec![a, b], |g, ins, _| {
            vec![Some(g.zip_map(ins[1], |d, y| d * y)), Some(g.zip_map(ins[0], |d, x| d * x))]
        })
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, vec![a], move |g, _, _| vec![Some(g.map(|d| d * s))])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x / (1.0 + (-x).exp()));
        self.push(v, vec![a], |g, ins, _| {
            vec![Some(g.zip_map(ins[0], |d, x| {
                let s = 1.0 / (1.0 + (-x).exp());
                d * s * (1.0 + x * (1.0 - s))
            }))]
        })
    }

    /// Adds `bias[c]` along `axis`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Var {
        let (outer, c, inner) = split3(self.shape(x), axis);
        assert_eq!(self.shape(bias), &[c], "bias length");
        let mut v = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for (i, val) in v.data_mut().iter_mut().enumerate() {
            *val += b[(i / inner) % c];
        }
        let _ = outer;
        self.push(v, vec![x, bias], move |g, _, _| {
            let mut db = vec![0.0; c];
            for (i, d) in g.data().iter().enumerate() {
                db[(i / inner) % c] += d;
            }
            vec![Some(g.clone()), Some(Tensor::from_parts(vec![c], db))]
        })
    }

    /// `x * (1 + scale) + shift` per `(sample, channel)` for `x: [n, c, ...]`;
    /// `scale` and `shift` are `[n, c]` or `[1, c]` (broadcast over samples).
    pub fn film(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let sn = self.shape(scale)[0];
        assert!(self.shape(scale) == [sn, c] && self.shape(shift) == [sn, c] && (sn == 1 || sn == n), "film shapes");
        let row = move |i: usize| if sn == 1 { (i / inner) % c } else { i / inner };
        let (s, t) = (self.value(scale).data().to_vec(), self.value(shift).data().to_vec());
        let mut v = self.value(x).clone();
        for (i, val) in v.data_mut().iter_mut().enumerate() {
            let r = row(i);
            *val = *val * (1.0 + s[r]) + t[r];
        }
        self.push(v, vec![x, scale, shift], move |g, ins, _| {
            let (xv, sv) = (ins[0].data(), ins[1].data());
            let mut dx = vec![0.0; g.numel()];
            let mut ds = vec![0.0; sn * c];
            let mut dt = vec![0.0; sn * c];
            for (i, &d) in g.data().iter().enumerate() {
                let r = row(i);
                dx[i] = d * (1.0 + sv[r]);
                ds[r] += d * xv[i];
                dt[r] += d;
            }
            vec![
                Some(Tensor::from_parts(g.shape().to_vec(), dx)),
                Some(Tensor::from_parts(vec![sn, c], ds)),
                Some(Tensor::from_parts(vec![sn, c], dt)),
            ]
        })
    }

    /// `x[..., k] @ w[k, n] -> [..., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let k = *xs.last().expect("matmul on scalar");
        let ws = self.shape(w).to_vec();
        assert!(ws.len() == 2 && ws[0] == k, "matmul {xs:?} x {ws:?}");
        let n = ws[1];
        let rows = self.value(x).numel() / k;
        let mut out = vec![0.0; rows * n];
        kernels::gemm(
            MatRef::row_major(self.value(x).data(), rows, k),
            MatRef::row_major(self.value(w).data(), k, n),
            0.0,
            &mut out,
        );
        let mut oshape = xs.clone();
        *oshape.last_mut().unwrap() = n;
        self.push(Tensor::from_parts(oshape, out), vec![x, w], move |g, ins, _| {
            let gv = MatRef::row_major(g.data(), rows, n);
            let mut dx = vec![0.0; rows * k];
            kernels::gemm(gv, MatRef::row_major(ins[1].data(), k, n).t(), 0.0, &mut dx);
            let mut dw = vec![0.0; k * n];
            kernels::gemm(MatRef::row_major(ins[0].data(), rows, k).t(), gv, 0.0, &mut dw);
            vec![Some(Tensor::from_parts(ins[0].shape().to_vec(), dx)), Some(Tensor::from_parts(vec![k, n], dw))]
        })
    }

    /// Batched `a[b, m, k] @ b[b, k, n]`, or `@ b^T` for `b[b, n, k]` when
    /// `transpose_b`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0], "bmm {sa:?} x {sb:?}");
        let (bsz, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        assert_eq!(if transpose_b { sb[2] } else { sb[1] }, k, "bmm inner");
        let out =
            kernels::bmm(self.value(a).data(), true, false, self.value(b).data(), true, transpose_b, bsz, m, k, n);
        self.push(Tensor::from_parts(vec![bsz, m, n], out), vec![a, b], move |g, ins, _| {
            // da = g @ b^T (or g @ b when b was transposed)
            let da = kernels::bmm(g.data(), true, false, ins[1].data(), true, !transpose_b, bsz, m, n, k);
            let db = if transpose_b {
                // d(b^T) = a^T g  =>  db = g^T a : [n, k]
                kernels::bmm(g.data(), true, true, ins[0].data(), true, false, bsz, n, m, k)
            } else {
                kernels::bmm(ins[0].data(), true, true, g.data(), true, false, bsz, k, m, n)
            };
            vec![
                Some(Tensor::from_parts(ins[0].shape().to_vec(), da)),
                Some(Tensor::from_parts(ins[1].shape().to_vec(), db)),
            ]
        })
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let d = *self.shape(x).last().unwrap();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_exact_mut(d) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        self.push(v, vec![x], move |g, _, y| {
            let mut dx = vec![0.0; g.numel()];
            for ((dr, gr), yr) in dx.chunks_exact_mut(d).zip(g.data().chunks_exact(d)).zip(y.data().chunks_exact(d)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for i in 0..d {
                    dr[i] = yr[i] * (gr[i] - dot);
                }
            }
            vec![Some(Tensor::from_parts(g.shape().to_vec(), dx))]
        })
    }

    /// Normalizes `x` over contiguous blocks of `block` values; `channel_of`
    /// maps a flat index to its affine channel.
    fn block_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        block: usize,
        channel_of: impl Fn(usize) -> usize + Clone + 'static,
        eps: f64,
    ) -> Var {
        let xv = self.value(x);
        let c = self.shape(gamma)[0];
        let (gm, bt) = (self.value(gamma).data().to_vec(), self.value(beta).data().to_vec());
        let nblocks = xv.numel() / block;
        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; nblocks];
        for (bi, (src, dst)) in xv.data().chunks_exact(block).zip(xhat.chunks_exact_mut(block)).enumerate() {
            let mean = src.iter().sum::<f64>() / block as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / block as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[bi] = r;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * r;
            }
        }
        let out: Vec<f64> = xhat.iter().enumerate().map(|(i, h)| h * gm[channel_of(i)] + bt[channel_of(i)]).collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), vec![x, gamma, beta], move |g, ins, _| {
            let gmv = ins[1].data();
            let gd = g.data();
            let mut dx = vec![0.0; gd.len()];
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            #[allow(clippy::needless_range_loop)]
            for bi in 0..nblocks {
                let range = bi * block..(bi + 1) * block;
                let mut sum_dh = 0.0;
                let mut sum_dh_h = 0.0;
                for i in range.clone() {
                    let ch = channel_of(i);
                    let dh = gd[i] * gmv[ch];
                    sum_dh += dh;
                    sum_dh_h += dh * xhat[i];
                    dgamma[ch] += gd[i] * xhat[i];
                    dbeta[ch] += gd[i];
                }
                let (m1, m2) = (sum_dh / block as f64, sum_dh_h / block as f64);
                for i in range {
                    let dh = gd[i] * gmv[channel_of(i)];
                    dx[i] = rstd[bi] * (dh - m1 - xhat[i] * m2);
                }
            }
            vec![
                Some(Tensor::from_parts(g.shape().to_vec(), dx)),
                Some(Tensor::from_parts(vec![c], dgamma)),
                Some(Tensor::from_parts(vec![c], dbeta)),
            ]
        })
    }

    /// Group norm over `x: [n, c, ...]` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let c = shape[1];
        assert!(c.is_multiple_of(groups) && self.shape(gamma) == [c], "group_norm channels");
        let inner: usize = shape[2..].iter().product();
        let block = c / groups * inner;
        self.block_norm(x, gamma, beta, block, move |i| (i / inner) % c, eps)
    }

    /// Layer norm over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let d = *self.shape(x).last().unwrap();
        assert_eq!(self.shape(gamma), &[d], "layer_norm width");
        self.block_norm(x, gamma, beta, d, move |i| i % d, eps)
    }

    /// `x: [n, c, h, w]`, `w: [o, c, k, k]`, `b: [o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert!(xs.len() == 4 && ws.len() == 4 && xs[1] == ws[1] && ws[2] == ws[3], "conv2d {xs:?} * {ws:?}");
        let geom = ConvGeom { c_in: xs[1], h: xs[2], w: xs[3], c_out: ws[0], k: ws[2], stride, pad };
        let (ho, wo) = geom.out_hw();
        let n = xs[0];
        let out = kernels::conv2d_forward(self.value(x).data(), n, self.value(w).data(), self.value(b).data(), &geom);
        self.push(Tensor::from_parts(vec![n, geom.c_out, ho, wo], out), vec![x, w, b], move |g, ins, _| {
            let (dx, dw, db) = kernels::conv2d_backward(ins[0].data(), n, ins[1].data(), g.data(), &geom);
            vec![
                Some(Tensor::from_parts(ins[0].shape().to_vec(), dx)),
                Some(Tensor::from_parts(ins[1].shape().to_vec(), dw)),
                Some(Tensor::from_parts(vec![geom.c_out], db)),
            ]
        })
    }

    /// Nearest-neighbour 2x upsampling of `[n, c, h, w]`.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![0.0; planes * 4 * h * w];
        for p in 0..planes {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        self.push(Tensor::from_parts(vec![s[0], s[1], 2 * h, 2 * w], out), vec![x], move |g, ins, _| {
            let mut dx = vec![0.0; planes * h * w];
            let gd = g.data();
            for p in 0..planes {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        dx[(p * h + y / 2) * w + xx / 2] += gd[(p * 2 * h + y) * 2 * w + xx];
                    }
                }
            }
            vec![Some(Tensor::from_parts(ins[0].shape().to_vec(), dx))]
        })
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let v = self.value(x).permute(perm);
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        self.push(v, vec![x], move |g, _, _| vec![Some(g.permute(&inverse))])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshaped(shape);
        self.push(v, vec![x], |g, ins, _| vec![Some(g.clone().reshaped(ins[0].shape()))])
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        let shapes: Vec<Vec<usize>> = xs.iter().map(|&v| self.shape(v).to_vec()).collect();
        let (outer, _, inner) = split3(&shapes[0], axis);
        for s in &shapes {
            assert!(
                s.len() == shapes[0].len() && s[..axis] == shapes[0][..axis] && s[axis + 1..] == shapes[0][axis + 1..],
                "concat {shapes:?}"
            );
        }
        let widths: Vec<usize> = shapes.iter().map(|s| s[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (v, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*v).data()[o * w..(o + 1) * w]);
            }
        }
        let mut oshape = shapes[0].clone();
        oshape[axis] = shapes.iter().map(|s| s[axis]).sum();
        self.push(Tensor::from_parts(oshape, out), xs.to_vec(), move |g, ins, _| {
            let mut parts: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(outer * w)).collect();
            let gd = g.data();
            for o in 0..outer {
                let mut off = o * total;
                for (p, &w) in parts.iter_mut().zip(&widths) {
                    p.extend_from_slice(&gd[off..off + w]);
                    off += w;
                }
            }
            parts.into_iter().zip(ins).map(|(p, i)| Some(Tensor::from_parts(i.shape().to_vec(), p))).collect()
        })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shape(x).to_vec();
        let (outer, c, inner) = split3(&shape, axis);
        assert!(start + len <= c, "narrow {start}+{len} of {c}");
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * c + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        self.push(Tensor::from_parts(oshape, out), vec![x], move |g, _, _| {
            let mut dx = vec![0.0; outer * c * inner];
            for (o, chunk) in g.data().chunks_exact(len * inner).enumerate() {
                let base = (o * c + start) * inner;
                dx[base..base + len * inner].copy_from_slice(chunk);
            }
            vec![Some(Tensor::from_parts(shape.clone(), dx))]
        })
    }

    /// Repeats a `[1, ...]` tensor `n` times along axis 0.
    pub fn repeat0(&mut self, x: Var, n: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s[0], 1, "repeat0 expects a leading 1");
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len() * n);
        for _ in 0..n {
            out.extend_from_slice(src);
        }
        let mut oshape = s.clone();
        oshape[0] = n;
        self.push(Tensor::from_parts(oshape, out), vec![x], move |g, ins, _| {
            let len = ins[0].numel();
            let mut dx = vec![0.0; len];
            for chunk in g.data().chunks_exact(len) {
                for (a, b) in dx.iter_mut().zip(chunk) {
                    *a += b;
                }
            }
            vec![Some(Tensor::from_parts(ins[0].shape().to_vec(), dx))]
        })
    }

    /// Mean squared error, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mse shapes");
        let n = self.value(a).numel() as f64;
        let v = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        self.push(Tensor::scalar(v), vec![a, b], move |g, ins, _| {
            let s = 2.0 * g.item() / n;
            let d = ins[0].zip_map(ins[1], |x, y| s * (x - y));
            let neg = d.map(|v| -v);
            vec![Some(d), Some(neg)]
        })
    }

    /// `sum(x * w)` for a constant weight tensor; a scalar probe used for
    /// gradient checks.
    pub fn weighted_sum(&mut self, x: Var, w: Tensor) -> Var {
        assert_eq!(self.shape(x), w.shape(), "weighted_sum shapes");
        let v: f64 = self.value(x).data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(v), vec![x], move |g, _, _| vec![Some(w.map(|v| v * g.item()))])
    }
}
