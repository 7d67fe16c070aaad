//! Full-reference image quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_shapes<T: Real>(op: &'static str, x: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::Dimension {
            op,
            lhs: x.shape().dims(),
            rhs: y.shape().dims(),
        });
    }
    Ok(())
}

pub fn mse<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    check_shapes("mse", x, y)?;
    let n = x.len().max(1) as f64;
    Ok(x.data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / n)
}

/// `10·log10(peak² / mse)`; identical inputs give `f64::INFINITY`.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (peak * peak / mse).log10()
}

pub fn psnr<T: Real>(x: &Tensor<T>, y: &Tensor<T>, peak: f64) -> Result<f64> {
    if peak.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Config(format!("PSNR peak must be > 0, got {peak}")));
    }
    Ok(psnr_from_mse(mse(x, y)?, peak))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = win.iter().enumerate().map(|(i, g)| g * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(i, g)| g * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over the valid region of every plane (11×11 Gaussian window,
/// σ = 1.5, `C1 = (0.01·peak)²`, `C2 = (0.03·peak)²`).
pub fn ssim<T: Real>(x: &Tensor<T>, y: &Tensor<T>, peak: f64) -> Result<f64> {
    check_shapes("ssim", x, y)?;
    let s = x.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::Shape {
            op: "ssim",
            reason: format!("image {}x{} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window", s.h, s.w),
        });
    }
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (K1 * peak).powi(2);
    let c2 = (K2 * peak).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            let px: Vec<f64> = x.plane(n, c).iter().map(|v| v.as_f64()).collect();
            let py: Vec<f64> = y.plane(n, c).iter().map(|v| v.as_f64()).collect();
            let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
            let mx = filter_valid(&px, s.h, s.w, &win);
            let my = filter_valid(&py, s.h, s.w, &win);
            let mxx = filter_valid(&prod(&px, &px), s.h, s.w, &win);
            let myy = filter_valid(&prod(&py, &py), s.h, s.w, &win);
            let mxy = filter_valid(&prod(&px, &py), s.h, s.w, &win);
            for i in 0..mx.len() {
                let (ux, uy) = (mx[i], my[i]);
                let vx = mxx[i] - ux * ux;
                let vy = myy[i] - uy * uy;
                let cxy = mxy[i] - ux * uy;
                let num = (2.0 * ux * uy + c1) * (2.0 * cxy + c2);
                let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image scores plus their arithmetic means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub images: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn new(label: impl Into<String>, images: Vec<ImageScore>, config: serde_json::Value) -> Self {
        let n = images.len().max(1) as f64;
        let mean_psnr = images.iter().map(|s| s.psnr).sum::<f64>() / n;
        let mean_ssim = images.iter().map(|s| s.ssim).sum::<f64>() / n;
        MetricsReport {
            label: label.into(),
            images,
            mean_psnr,
            mean_ssim,
            config,
        }
    }

    /// Tab-separated table: one row per image, then a `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tpsnr_db\tssim\n");
        for s in &self.images {
            out.push_str(&format!("{}\t{:.6}\t{:.6}\n", s.id, s.psnr, s.ssim));
        }
        out.push_str(&format!("mean\t{:.6}\t{:.6}\n", self.mean_psnr, self.mean_ssim));
        out
    }
}
