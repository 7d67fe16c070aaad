//! Separable bicubic resampling (Keys kernel, `a = -0.5`) with clamped edges.
//!
//! When shrinking, the kernel is stretched by the inverse scale so it acts
//! as an anti-aliasing filter; taps are always renormalized to sum to one.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

const A: f64 = -0.5;

pub fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source indices and normalized weights contributing to one output sample.
#[derive(Clone, Debug)]
pub struct Taps {
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

/// Tap table mapping `in_len` samples to `out_len` samples (pixel-center aligned).
pub fn taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = out_len as f64 / in_len as f64;
    let stretch = if scale < 1.0 { 1.0 / scale } else { 1.0 };
    let support = 2.0 * stretch;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut index = Vec::new();
            let mut weight = Vec::new();
            for j in lo..=hi {
                let w = cubic((center - j as f64) / stretch);
                if w != 0.0 {
                    index.push(j.clamp(0, in_len as isize - 1) as usize);
                    weight.push(w);
                }
            }
            let total: f64 = weight.iter().sum();
            for w in &mut weight {
                *w /= total;
            }
            Taps { index, weight }
        })
        .collect()
}

/// Resize every `H×W` plane of `img` to `out_h × out_w`.
pub fn bicubic_resize<T: Real>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = img.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape {
            op: "bicubic_resize",
            reason: format!("output size {out_h}x{out_w} is empty"),
        });
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::Shape {
            op: "bicubic_resize",
            reason: format!("input {s} is empty"),
        });
    }
    if (out_h, out_w) == (s.h, s.w) {
        return Ok(img.clone());
    }
    let tx = taps(s.w, out_w);
    let ty = taps(s.h, out_h);
    let os = Shape::new(s.n, s.c, out_h, out_w);
    let mut out = Vec::with_capacity(os.numel());
    let mut rows = vec![0.0f64; s.h * out_w];
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = img.plane(n, c);
            for y in 0..s.h {
                let src = &plane[y * s.w..(y + 1) * s.w];
                for (x, t) in tx.iter().enumerate() {
                    rows[y * out_w + x] = t
                        .index
                        .iter()
                        .zip(&t.weight)
                        .map(|(&j, &w)| w * src[j].as_f64())
                        .sum();
                }
            }
            for t in &ty {
                for x in 0..out_w {
                    let v: f64 = t
                        .index
                        .iter()
                        .zip(&t.weight)
                        .map(|(&j, &w)| w * rows[j * out_w + x])
                        .sum();
                    out.push(T::from_f64(v));
                }
            }
        }
    }
    Tensor::new(os, out)
}

/// Low-resolution counterpart of `hr` by bicubic downscaling.
pub fn make_lr<T: Real>(hr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let s = hr.shape();
    if scale == 0 || !s.h.is_multiple_of(scale) || !s.w.is_multiple_of(scale) {
        return Err(Error::Shape {
            op: "make_lr",
            reason: format!("{}x{} not divisible by scale {scale}", s.h, s.w),
        });
    }
    bicubic_resize(hr, s.h / scale, s.w / scale)
}

/// Bicubic upscaling by an integer factor.
pub fn bicubic_upscale<T: Real>(lr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let s = lr.shape();
    bicubic_resize(lr, s.h * scale, s.w * scale)
}
