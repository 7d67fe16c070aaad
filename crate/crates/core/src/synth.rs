//! Procedural multimodal phantoms.
//!
//! Each record shares one anatomy: a soft-edged body ellipse filled with
//! tissue ellipses and smooth blobs, crossed by thin curvilinear vessels.
//! Every modality maps the tissue field through its own monotone intensity
//! curve, weights the vessels differently and adds its own smooth texture.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{write_pgm, GrayImage};
use crate::manifest::{Dataset, DatasetManifest, Record, Sample, Split};
use crate::tensor::{Real, Shape, Tensor};

pub const MODALITY_NAMES: [&str; 3] = ["t1w", "t2w", "pd"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub hr_size: usize,
    pub n_modalities: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            train: 200,
            val: 10,
            test: 20,
            hr_size: 96,
            n_modalities: 2,
        }
    }
}

impl SynthConfig {
    pub fn count(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn validate(&self) -> Result<()> {
        if self.hr_size < 32 {
            return Err(Error::Config(format!("hr_size must be >= 32, got {}", self.hr_size)));
        }
        if !(1..=MODALITY_NAMES.len()).contains(&self.n_modalities) {
            return Err(Error::Config(format!(
                "n_modalities must be in 1..={}, got {}",
                MODALITY_NAMES.len(),
                self.n_modalities
            )));
        }
        Ok(())
    }

    pub fn modalities(&self) -> Vec<String> {
        MODALITY_NAMES[..self.n_modalities].iter().map(|s| s.to_string()).collect()
    }

    /// `t2w` when available, otherwise the only modality.
    pub fn target(&self) -> String {
        MODALITY_NAMES[if self.n_modalities >= 2 { 1 } else { 0 }].to_string()
    }

    fn split_of(&self, i: usize) -> Split {
        if i < self.train {
            Split::Train
        } else if i < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecord {
    pub id: String,
    pub split: Split,
    /// One `1×1×S×S` image per modality, values in `[0, 1]`.
    pub images: Vec<Tensor<f64>>,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, center: f64, r: (f64, f64)) -> Self {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        Ellipse {
            cx: rng.random_range(-center..=center),
            cy: rng.random_range(-center..=center),
            rx: rng.random_range(r.0..r.1),
            ry: rng.random_range(r.0..r.1),
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    /// Normalized radius: 1 on the boundary.
    fn rho(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt()
    }
}

fn soft_step(t: f64, sharpness: f64) -> f64 {
    1.0 / (1.0 + (-t * sharpness).exp())
}

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

/// Monotone intensity curves, one per modality.
fn contrast(m: usize, s: f64) -> f64 {
    match m {
        0 => 0.15 + 0.8 * s.powf(0.7),
        1 => 0.9 - 0.75 * s.powf(1.3),
        _ => 0.3 + 0.6 * (1.0 - (-2.5 * s).exp()) / (1.0 - (-2.5f64).exp()),
    }
}

const EDGE_SHARPNESS: f64 = 150.0;

const VESSEL_WEIGHT: [f64; 3] = [0.45, 0.12, 0.3];

/// Generate record `index` of the dataset described by `cfg`.
pub fn synth_record(cfg: &SynthConfig, index: usize) -> Result<SynthRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let size = cfg.hr_size;

    let body = Ellipse::random(&mut rng, 0.08, (0.72, 0.9));
    let n_tissue = rng.random_range(3..=6);
    let tissues: Vec<(Ellipse, f64)> = (0..n_tissue)
        .map(|_| (Ellipse::random(&mut rng, 0.45, (0.12, 0.4)), rng.random_range(-0.35..0.45)))
        .collect();
    let n_blobs = rng.random_range(4..=8);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            (
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(0.08..0.25),
                rng.random_range(-0.2..0.2),
            )
        })
        .collect();
    let n_vessels = rng.random_range(6..=12);
    let vessels: Vec<Vec<(f64, f64)>> = (0..n_vessels)
        .map(|_| {
            let p: Vec<(f64, f64)> = (0..3)
                .map(|_| (rng.random_range(-0.75..0.75), rng.random_range(-0.75..0.75)))
                .collect();
            (0..=48)
                .map(|i| {
                    let t = i as f64 / 48.0;
                    let (a, b, c) = ((1.0 - t).powi(2), 2.0 * t * (1.0 - t), t * t);
                    (a * p[0].0 + b * p[1].0 + c * p[2].0, a * p[0].1 + b * p[1].1 + c * p[2].1)
                })
                .collect()
        })
        .collect();
    let vessel_sigma = rng.random_range(0.4..0.8) * 2.0 / size as f64;
    let textures: Vec<Vec<Wave>> = (0..cfg.n_modalities)
        .map(|_| {
            (0..4)
                .map(|_| Wave {
                    fx: rng.random_range(-9.0..9.0),
                    fy: rng.random_range(-9.0..9.0),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: rng.random_range(0.005..0.015),
                })
                .collect()
        })
        .collect();

    let shape = Shape::new(1, 1, size, size);
    let mut images: Vec<Tensor<f64>> = (0..cfg.n_modalities).map(|_| Tensor::zeros(shape)).collect();
    let px = 2.0 / size as f64;
    for yi in 0..size {
        let y = -1.0 + (yi as f64 + 0.5) * px;
        for xi in 0..size {
            let x = -1.0 + (xi as f64 + 0.5) * px;
            let inside = soft_step(1.0 - body.rho(x, y), EDGE_SHARPNESS);
            let mut s = 0.45;
            for (e, level) in &tissues {
                s += level * soft_step(1.0 - e.rho(x, y), EDGE_SHARPNESS);
            }
            for &(bx, by, br, amp) in &blobs {
                s += amp * (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * br * br)).exp();
            }
            let s = s.clamp(0.0, 1.0);
            let d2 = vessels
                .iter()
                .flat_map(|curve| curve.windows(2))
                .map(|seg| segment_dist2((x, y), seg[0], seg[1]))
                .fold(f64::INFINITY, f64::min);
            let v = (-d2 / (2.0 * vessel_sigma * vessel_sigma)).exp();
            for (m, img) in images.iter_mut().enumerate() {
                let tex: f64 = textures[m]
                    .iter()
                    .map(|w| w.amp * (std::f64::consts::PI * (w.fx * x + w.fy * y) + w.phase).sin())
                    .sum();
                let value = inside * (contrast(m, s) + VESSEL_WEIGHT[m] * v + tex);
                img.set(0, 0, yi, xi, value.clamp(0.0, 1.0));
            }
        }
    }
    Ok(SynthRecord {
        id: format!("slice{index:04}"),
        split: cfg.split_of(index),
        images,
    })
}

fn segment_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<SynthRecord>> {
    cfg.validate()?;
    (0..cfg.count()).map(|i| synth_record(cfg, i)).collect()
}

/// The same records as an in-memory [`Dataset`], without 16-bit quantization.
pub fn synth_in_memory<T: Real>(cfg: &SynthConfig) -> Result<Dataset<T>> {
    let samples = synth_dataset(cfg)?
        .into_iter()
        .map(|r| Sample {
            id: r.id,
            split: r.split,
            images: r.images.iter().map(Tensor::cast).collect(),
        })
        .collect();
    let modalities = cfg.modalities();
    let target = modalities.iter().position(|m| *m == cfg.target()).unwrap_or(0);
    Ok(Dataset {
        modalities,
        target,
        samples,
    })
}

/// Generate the dataset and write it as 16-bit graymaps plus `manifest.toml`
/// under `dir`. Returns the manifest.
pub fn write_dataset(cfg: &SynthConfig, dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let modalities = cfg.modalities();
    let mut records = Vec::with_capacity(cfg.count());
    for i in 0..cfg.count() {
        let rec = synth_record(cfg, i)?;
        let mut paths = std::collections::BTreeMap::new();
        for (name, img) in modalities.iter().zip(&rec.images) {
            let file = format!("{}_{}.pgm", rec.id, name);
            write_pgm(&dir.join(&file), &GrayImage::from_tensor(img, 0, u16::MAX))?;
            paths.insert(name.clone(), file);
        }
        records.push(Record {
            id: rec.id,
            split: rec.split,
            paths,
        });
    }
    let manifest = DatasetManifest {
        modalities,
        target: cfg.target(),
        hr_size: cfg.hr_size,
        bit_depth: 16,
        records,
    };
    manifest.save(&dir.join("manifest.toml"))?;
    Ok(manifest)
}

/// Central-difference gradient magnitude of plane 0.
pub fn gradient_magnitude(img: &Tensor<f64>) -> Vec<f64> {
    let s = img.shape();
    let mut out = Vec::with_capacity(s.plane());
    for y in 0..s.h {
        for x in 0..s.w {
            let gx = img.at(0, 0, y, (x + 1).min(s.w - 1)) - img.at(0, 0, y, x.saturating_sub(1));
            let gy = img.at(0, 0, (y + 1).min(s.h - 1), x) - img.at(0, 0, y.saturating_sub(1), x);
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Pearson correlation coefficient.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}
