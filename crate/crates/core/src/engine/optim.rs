use super::autograd::Gradients;
use super::nn::{Bound, ParamStore};
use super::tensor::Tensor;

/// Adam with optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0), step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient. Returns the
    /// global gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore, bound: &Bound, grads: &Gradients) -> f64 {
        if self.m.len() != params.len() {
            self.m = params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
            self.v = self.m.clone();
        }
        let norm = params
            .ids()
            .filter_map(|id| grads.get(bound.var(id)))
            .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = grads.get(bound.var(id)) else { continue };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let w = params.get_mut(id).data_mut();
            for j in 0..w.len() {
                let gj = g.data()[j] * scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                w[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        norm
    }
}
