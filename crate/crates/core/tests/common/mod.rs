//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's kernels.

#![allow(dead_code)]

use mmhca::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// Direct six-deep loop: `out[n,o,y,x] = b[o] + Σ w[o,i,ky,kx] · x[n,i,y+ky-p,x+kx-p]`,
/// with zeros outside the input.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let oh = xs.h + 2 * pad + 1 - k;
    let ow = xs.w + 2 * pad + 1 - k;
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, oh, ow));
    for n in 0..xs.n {
        for o in 0..ws.n {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for i in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = (y + ky) as isize - pad as isize;
                                let sx = (xx + kx) as isize - pad as isize;
                                if sy < 0 || sx < 0 || sy >= xs.h as isize || sx >= xs.w as isize {
                                    continue;
                                }
                                acc += w.at(o, i, ky, kx) * x.at(n, i, sy as usize, sx as usize);
                            }
                        }
                    }
                    out.set(n, o, y, xx, acc);
                }
            }
        }
    }
    out
}

/// Scatter form: every input pixel adds `x · w[i,o,·,·]` into a `k×k`
/// window of the output. `w` is `(in, out, k, k)`.
pub fn naive_conv_transpose2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let os = Shape::new(xs.n, ws.c, xs.h + k - 1, xs.w + k - 1);
    let mut out = Tensor::from_fn(os, |_, o, _, _| b.map_or(0.0, |b| b[o]));
    for n in 0..xs.n {
        for i in 0..xs.c {
            for y in 0..xs.h {
                for xx in 0..xs.w {
                    let v = x.at(n, i, y, xx);
                    for o in 0..ws.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let cur = out.at(n, o, y + ky, xx + kx);
                                out.set(n, o, y + ky, xx + kx, cur + v * w.at(i, o, ky, kx));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Deterministic 16×16 pair for the SSIM oracle.
pub fn ssim_pair() -> (Tensor<f64>, Tensor<f64>) {
    let s = Shape::new(1, 1, 16, 16);
    let x = Tensor::from_fn(s, |_, _, i, j| ((i * 16 + j) * 37 % 101) as f64 / 100.0);
    let y = Tensor::from_fn(s, |_, _, i, j| {
        0.8 * (((i * 16 + j) * 37 % 101) as f64 / 100.0) + 0.1 * (((i * 3 + j * 5) % 7) as f64 / 6.0)
    });
    (x, y)
}

/// Mean SSIM of [`ssim_pair`] from scikit-image 0.25
/// (`structural_similarity(x, y, data_range=1, gaussian_weights=True,
/// sigma=1.5, use_sample_covariance=False)`), cross-checked against a
/// scipy `correlate2d` valid-mode evaluation to within 1e-15.
pub const SSIM_PAIR_REFERENCE: f64 = 0.957_191_240_521_025_8;
