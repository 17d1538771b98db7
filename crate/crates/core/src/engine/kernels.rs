//! Numeric kernels behind the autograd ops. GEMM goes through
//! `matrixmultiply`; batch-level loops fan out through [`crate::parallel`].

use crate::parallel;

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }
}

/// `c = a * b + beta * c`, with `c` row-major `a.rows x b.cols`.
pub fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dims");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the asserts above and the view constructors guarantee every
    // strided access stays inside the borrowed slices; `c` is exclusively
    // borrowed and does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Batched `[bsz, m, k] x [bsz, k, n]`, either operand optionally transposed
/// in its last two axes. Each operand may be shared across the batch by
/// passing `a_batched = false`.
#[allow(clippy::too_many_arguments)]
pub fn bmm(
    a: &[f64],
    a_batched: bool,
    a_t: bool,
    b: &[f64],
    b_batched: bool,
    b_t: bool,
    bsz: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; bsz * m * n];
    parallel::for_each_chunk(&mut out, m * n, |i, c| {
        let ai = if a_batched { i * m * k } else { 0 };
        let bi = if b_batched { i * k * n } else { 0 };
        let av = if a_t {
            MatRef::row_major(&a[ai..ai + m * k], k, m).t()
        } else {
            MatRef::row_major(&a[ai..ai + m * k], m, k)
        };
        let bv = if b_t {
            MatRef::row_major(&b[bi..bi + k * n], n, k).t()
        } else {
            MatRef::row_major(&b[bi..bi + k * n], k, n)
        };
        gemm(av, bv, 0.0, c);
    });
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        ((self.h + 2 * self.pad - self.k) / self.stride + 1, (self.w + 2 * self.pad - self.k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let mut cols = vec![0.0; g.patch() * ho * wo];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `x: [n, c_in, h, w]`, `weight: [c_out, c_in, k, k]`, `bias: [c_out]`.
pub fn conv2d_forward(x: &[f64], n: usize, weight: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * ho * wo;
    let mut out = vec![0.0; n * out_sz];
    parallel::for_each_chunk(&mut out, out_sz, |i, o| {
        let xi = &x[i * in_sz..(i + 1) * in_sz];
        for (c, b) in bias.iter().enumerate() {
            o[c * ho * wo..(c + 1) * ho * wo].fill(*b);
        }
        let wv = MatRef::row_major(weight, g.c_out, g.patch());
        if g.is_pointwise() {
            gemm(wv, MatRef::row_major(xi, g.c_in, ho * wo), 1.0, o);
        } else {
            let cols = im2col(xi, g);
            gemm(wv, MatRef::row_major(&cols, g.patch(), ho * wo), 1.0, o);
        }
    });
    out
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv2d_backward(
    x: &[f64],
    n: usize,
    weight: &[f64],
    dout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ho, wo) = g.out_hw();
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * ho * wo;
    let wsz = g.c_out * g.patch();
    // Per-sample [dx | dweight] blocks, reduced afterwards in sample order.
    let mut scratch = vec![0.0; n * (in_sz + wsz)];
    parallel::for_each_chunk(&mut scratch, in_sz + wsz, |i, block| {
        let (dx, dw) = block.split_at_mut(in_sz);
        let xi = &x[i * in_sz..(i + 1) * in_sz];
        let di = MatRef::row_major(&dout[i * out_sz..(i + 1) * out_sz], g.c_out, ho * wo);
        let wv = MatRef::row_major(weight, g.c_out, g.patch());
        if g.is_pointwise() {
            gemm(di, MatRef::row_major(xi, g.c_in, ho * wo).t(), 0.0, dw);
            gemm(wv.t(), di, 0.0, dx);
        } else {
            let cols = im2col(xi, g);
            gemm(di, MatRef::row_major(&cols, g.patch(), ho * wo).t(), 0.0, dw);
            let mut dcols = vec![0.0; g.patch() * ho * wo];
            gemm(wv.t(), di, 0.0, &mut dcols);
            col2im(&dcols, g, dx);
        }
    });
    let mut dx = Vec::with_capacity(n * in_sz);
    let mut dw = vec![0.0; wsz];
    for block in scratch.chunks_exact(in_sz + wsz) {
        dx.extend_from_slice(&block[..in_sz]);
        for (a, b) in dw.iter_mut().zip(&block[in_sz..]) {
            *a += b;
        }
    }
    let mut db = vec![0.0; g.c_out];
    for i in 0..n {
        for (c, acc) in db.iter_mut().enumerate() {
            let s = (i * g.c_out + c) * ho * wo;
            *acc += dout[s..s + ho * wo].iter().sum::<f64>();
        }
    }
    (dx, dw, db)
}
