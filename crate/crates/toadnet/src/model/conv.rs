//! Strided 2D convolution with explicit backward passes.
//!
//! Images are (H, W, C) in standard layout. The forward pass lowers each
//! input to a patch matrix (im2col) and multiplies it against the weight
//! matrix, which keeps the hot loop inside the GEMM; the backward pass
//! reuses the cached patch matrix for the weight gradient and scatters the
//! patch-space gradient back to the input (col2im).

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// (kernel * kernel * c_in, c_out)
    pub weights: Array2<f32>,
    pub bias: Array1<f32>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub c_in: usize,
    pub c_out: usize,
}

#[derive(Debug)]
pub struct ConvCache {
    cols: Array2<f32>,
    in_dim: (usize, usize, usize),
    out_hw: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weights: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Conv2d {
    /// He-uniform init: weights in +-sqrt(6 / fan_in), zero bias.
    pub fn he_init(
        kernel: usize,
        stride: usize,
        pad: usize,
        c_in: usize,
        c_out: usize,
        seed: u64,
    ) -> Conv2d {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = (kernel * kernel * c_in) as f64;
        let limit = (6.0 / fan_in).sqrt() as f32;
        let weights =
            Array2::from_shape_fn((kernel * kernel * c_in, c_out), |_| rng.gen_range(-limit..limit));
        Conv2d { weights, bias: Array1::zeros(c_out), kernel, stride, pad, c_in, c_out }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Array3<f32>) -> (Array2<f32>, (usize, usize)) {
        let (h, w, c) = x.dim();
        debug_assert_eq!(c, self.c_in);
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let row_len = k * k * c;
        let mut cols = Array2::<f32>::zeros((oh * ow, row_len));
        let xs = x.as_slice().expect("standard layout");
        let cs = cols.as_slice_mut().expect("standard layout");
        for oy in 0..oh {
            for ox in 0..ow {
                let rbase = (oy * ow + ox) * row_len;
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = (iy as usize * w + ix as usize) * c;
                        let dst = rbase + (ky * k + kx) * c;
                        cs[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
        }
        (cols, (oh, ow))
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array3<f32>) -> (Array3<f32>, ConvCache) {
        let (cols, (oh, ow)) = self.im2col(x);
        let mut out = cols.dot(&self.weights);
        for mut row in out.rows_mut() {
            row += &self.bias;
        }
        let out = out.into_shape_with_order((oh, ow, self.c_out)).expect("shape");
        (out, ConvCache { cols, in_dim: x.dim(), out_hw: (oh, ow) })
    }

    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, cache: &ConvCache, d_out: &Array3<f32>) -> (ConvGrads, Array3<f32>) {
        let (oh, ow) = cache.out_hw;
        debug_assert_eq!(d_out.dim(), (oh, ow, self.c_out));
        let d_mat = d_out
            .view()
            .into_shape_with_order((oh * ow, self.c_out))
            .expect("standard layout");
        let d_weights = cache.cols.t().dot(&d_mat);
        let d_bias = d_mat.sum_axis(ndarray::Axis(0));
        let d_cols = d_mat.dot(&self.weights.t());

        let (h, w, c) = cache.in_dim;
        let k = self.kernel;
        let row_len = k * k * c;
        let mut dx = Array3::<f32>::zeros((h, w, c));
        let dxs = dx.as_slice_mut().expect("standard layout");
        let dcs = d_cols.as_slice().expect("standard layout");
        for oy in 0..oh {
            for ox in 0..ow {
                let rbase = (oy * ow + ox) * row_len;
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = (iy as usize * w + ix as usize) * c;
                        let src = rbase + (ky * k + kx) * c;
                        for ch in 0..c {
                            dxs[dst + ch] += dcs[src + ch];
                        }
                    }
                }
            }
        }
        (ConvGrads { weights: d_weights, bias: d_bias }, dx)
    }
}
