use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::RgbFrame;

/// Reference image to a fixed-width embedding consumed by cross-attention.
/// A pretrained encoder can be plugged in behind this trait.
pub trait ImageEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, image: &RgbFrame) -> Vec<f64>;
}

/// Average-pools the image to an `grid x grid` RGB thumbnail and applies a
/// fixed random projection drawn from `seed`.
#[derive(Clone, Debug)]
pub struct RandomProjectionEncoder {
    grid: usize,
    dim: usize,
    projection: Tensor,
}

impl RandomProjectionEncoder {
    pub fn new(dim: usize, grid: usize, seed: u64) -> Self {
        let inputs = grid * grid * 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = Tensor::randn(&[inputs, dim], (1.0 / inputs as f64).sqrt(), &mut rng);
        Self { grid, dim, projection }
    }

    fn pool(&self, image: &RgbFrame) -> Vec<f64> {
        let (w, h) = image.dims();
        let g = self.grid;
        let mut sums = vec![0.0; g * g * 3];
        let mut counts = vec![0usize; g * g];
        for y in 0..h {
            for x in 0..w {
                let cell = (y * g / h) * g + x * g / w;
                let px = image.pixel(x, y);
                for c in 0..3 {
                    sums[cell * 3 + c] += px[c];
                }
                counts[cell] += 1;
            }
        }
        for (i, s) in sums.iter_mut().enumerate() {
            *s /= counts[i / 3].max(1) as f64;
        }
        sums
    }
}

impl ImageEncoder for RandomProjectionEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, image: &RgbFrame) -> Vec<f64> {
        let pooled = self.pool(image);
        let p = self.projection.data();
        let mut out = vec![0.0; self.dim];
        for (i, v) in pooled.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&p[i * self.dim..(i + 1) * self.dim]) {
                *o += v * w;
            }
        }
        out
    }
}
