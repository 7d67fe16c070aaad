//! Browser bindings: one synthetic slice pair, its bicubic degradation and
//! the attention maps of a randomly weighted module.
//!
//! The exported types are thin wrappers; the work happens in plain
//! functions that also run (and are tested) natively.

use mmhca::attention::{attention_forward, AttentionConfig};
use mmhca::metrics::{psnr, ssim};
use mmhca::params::Init;
use mmhca::resample::{bicubic_upscale, make_lr};
use mmhca::synth::{synth_record, SynthConfig};
use mmhca::{Graph, ParamSet, Result, Tensor};
use wasm_bindgen::prelude::*;

fn js(e: mmhca::Error) -> JsError {
    JsError::new(&format!("{}: {e}", e.code()))
}

/// Grayscale RGBA bytes of plane 0, values clamped to `[0, 1]`.
pub fn gray_rgba(t: &Tensor<f64>) -> Vec<u8> {
    t.plane(0, 0)
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

/// Black → red → yellow → white ramp over `[lo, hi]`.
pub fn heat_rgba(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    values
        .iter()
        .flat_map(|&v| {
            let t = ((v - lo) / span).clamp(0.0, 1.0) * 3.0;
            let ch = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
            [ch(t), ch(t - 1.0), ch(t - 2.0), 255]
        })
        .collect()
}

/// HR slices of record 0 for `seed`: T1w first, T2w second.
pub fn phantom(seed: u64, size: usize) -> Result<Vec<Tensor<f64>>> {
    let cfg = SynthConfig {
        seed,
        train: 1,
        val: 0,
        test: 0,
        hr_size: size,
        n_modalities: 2,
    };
    Ok(synth_record(&cfg, 0)?.images)
}

pub struct Degraded {
    pub lr: Tensor<f64>,
    pub upscaled: Tensor<f64>,
    pub psnr: f64,
    pub ssim: f64,
}

/// Downscale `hr`, upscale it back with bicubic interpolation, and score it.
pub fn degrade(hr: &Tensor<f64>, scale: usize) -> Result<Degraded> {
    let lr = make_lr(hr, scale)?;
    let upscaled = bicubic_upscale(&lr, scale)?.map(|v| v.clamp(0.0, 1.0));
    Ok(Degraded {
        psnr: psnr(&upscaled, hr, 1.0)?,
        ssim: ssim(&upscaled, hr, 1.0)?,
        lr,
        upscaled,
    })
}

/// Attention module weights with every layer randomly initialized. The
/// training init zeroes each head's last layer, which would show a flat
/// map of 0.5 here.
pub fn random_attention_params(cfg: &AttentionConfig, channels: usize, seed: u64) -> Result<ParamSet<f64>> {
    let decls = cfg
        .decls("attn", channels)?
        .into_iter()
        .map(|d| {
            if d.name.ends_with(".weight") {
                // Deconv weights are `(in, out, k, k)`, convs `(out, in, k, k)`.
                let cin = if d.name.contains(".deconv.") { d.shape.n } else { d.shape.c };
                let fan_in = cin * d.shape.h * d.shape.w;
                d.with_init(Init::He { fan_in })
            } else {
                d
            }
        })
        .collect::<Vec<_>>();
    ParamSet::init(&decls, seed)
}

/// Channel-mean attention map `A` of the module applied to the stacked slices.
pub fn mean_attention(images: &[Tensor<f64>], cfg: &AttentionConfig, seed: u64) -> Result<Vec<f64>> {
    let params = random_attention_params(cfg, images.len(), seed)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let inputs: Vec<_> = images.iter().map(|t| g.constant(t.clone())).collect();
    let t_cat = g.concat_channels(&inputs)?;
    let (_, a) = attention_forward(&mut g, &bound, "attn", cfg, t_cat)?;
    let a = g.value(a);
    let s = a.shape();
    let mut mean = vec![0.0; s.plane()];
    for c in 0..s.c {
        for (m, v) in mean.iter_mut().zip(a.plane(0, c)) {
            *m += v / s.c as f64;
        }
    }
    Ok(mean)
}

#[wasm_bindgen]
pub struct Phantom {
    size: usize,
    images: Vec<Tensor<f64>>,
}

#[wasm_bindgen]
impl Phantom {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: u32) -> std::result::Result<Phantom, JsError> {
        let size = size as usize;
        Ok(Phantom {
            size,
            images: phantom(seed as u64, size).map_err(js)?,
        })
    }

    pub fn size(&self) -> u32 {
        self.size as u32
    }

    /// RGBA of modality 0 (T1w) or 1 (T2w).
    pub fn slice_rgba(&self, modality: u32) -> Vec<u8> {
        gray_rgba(&self.images[(modality as usize).min(1)])
    }

    /// Bicubic round trip of the T2w slice.
    pub fn degrade(&self, scale: u32) -> std::result::Result<Degradation, JsError> {
        let scale = scale as usize;
        let d = degrade(&self.images[1], scale).map_err(js)?;
        Ok(Degradation {
            lr_size: self.size / scale,
            inner: d,
        })
    }

    /// Channel-mean attention over both slices, as a heat map stretched to its own range.
    pub fn attention(&self, heads: u32, reduction: f64, seed: u32) -> std::result::Result<AttentionView, JsError> {
        let cfg = AttentionConfig::new(heads as usize, reduction).map_err(js)?;
        let mean = mean_attention(&self.images, &cfg, seed as u64).map_err(js)?;
        let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(AttentionView {
            rgba: heat_rgba(&mean, lo, hi),
            lo,
            hi,
        })
    }
}

#[wasm_bindgen]
pub struct Degradation {
    lr_size: usize,
    inner: Degraded,
}

#[wasm_bindgen]
impl Degradation {
    pub fn lr_size(&self) -> u32 {
        self.lr_size as u32
    }

    pub fn psnr(&self) -> f64 {
        self.inner.psnr
    }

    pub fn ssim(&self) -> f64 {
        self.inner.ssim
    }

    pub fn lr_rgba(&self) -> Vec<u8> {
        gray_rgba(&self.inner.lr)
    }

    pub fn upscaled_rgba(&self) -> Vec<u8> {
        gray_rgba(&self.inner.upscaled)
    }
}

#[wasm_bindgen]
pub struct AttentionView {
    rgba: Vec<u8>,
    lo: f64,
    hi: f64,
}

#[wasm_bindgen]
impl AttentionView {
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }
}
