//! Multi-head convolutional attention over concatenated modality encodings.
//!
//! Head `j` (1-based) maps the concatenated tensor `T∘` with `c` channels
//! through a `k_j × k_j` convolution to `round(c / r)` channels (stride 1,
//! no padding), a ReLU, and a `k_j × k_j` transposed convolution back to
//! `c` channels, which restores the spatial size exactly. Head outputs are
//! summed, squashed by a sigmoid into the attention tensor `A`, and
//! `T∘ ⊙ A` is returned alongside `A`.
//!
//! The default kernel schedule is `k_j = 2(j - 1) + 1`, i.e. 1, 3, 5, 7...

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::{write_pgm, GrayImage};
use crate::layers;
use crate::params::{Bound, Init, ParamDecl};
use crate::tensor::{Real, Shape, Tensor};

/// He gain multiplier for the single conv of a deconv-free head. It cannot
/// start at zero: the ReLU that follows would never pass a gradient.
const HEAD_OUT_GAIN: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub heads: usize,
    /// Channel reduction ratio `r`; each head has `round(c / r)` filters.
    pub reduction: f64,
    /// Replace conv→ReLU→deconv by a single padded `c → c` conv→ReLU.
    #[serde(default)]
    pub no_deconv: bool,
    /// Force every head to this kernel size instead of the 1, 3, 5, ... schedule.
    #[serde(default)]
    pub uniform_kernel: Option<usize>,
}

impl Default for AttentionConfig {
    /// Three heads with `r = 0.5`.
    fn default() -> Self {
        AttentionConfig {
            heads: 3,
            reduction: 0.5,
            no_deconv: false,
            uniform_kernel: None,
        }
    }
}

impl AttentionConfig {
    pub fn new(heads: usize, reduction: f64) -> Result<Self> {
        let c = AttentionConfig {
            heads,
            reduction,
            ..Default::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::Config("attention needs at least one head".into()));
        }
        if !(self.reduction.is_finite() && self.reduction > 0.0) {
            return Err(Error::Config(format!("reduction ratio must be > 0, got {}", self.reduction)));
        }
        if let Some(k) = self.uniform_kernel {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Config(format!("kernel size must be odd and >= 1, got {k}")));
            }
        }
        Ok(())
    }

    pub fn kernel_schedule(&self) -> Vec<usize> {
        (1..=self.heads)
            .map(|j| self.uniform_kernel.unwrap_or(2 * (j - 1) + 1))
            .collect()
    }

    /// Filters per head for `c` input channels: `round(c / r)`, at least 1.
    pub fn filters(&self, channels: usize) -> usize {
        ((channels as f64 / self.reduction).round() as usize).max(1)
    }

    /// Check the configuration against an input of shape `s`.
    pub fn validate_for(&self, s: Shape) -> Result<()> {
        self.validate()?;
        if self.no_deconv {
            return Ok(());
        }
        let max_k = self.kernel_schedule().into_iter().max().unwrap_or(1);
        if max_k > s.h.min(s.w) {
            return Err(Error::Shape {
                op: "attention",
                reason: format!("kernel {max_k}x{max_k} larger than spatial extent {}x{}", s.h, s.w),
            });
        }
        Ok(())
    }

    pub fn decls(&self, prefix: &str, channels: usize) -> Result<Vec<ParamDecl>> {
        self.validate()?;
        let mut v = Vec::new();
        for (j, k) in self.kernel_schedule().into_iter().enumerate() {
            let head = format!("{prefix}.head{}", j + 1);
            // The last layer of every head starts at (or near) zero so that
            // A starts near 0.5 instead of in the saturated tails of the sigmoid.
            if self.no_deconv {
                let [w, b] = ParamDecl::conv(&format!("{head}.conv"), channels, channels, k);
                let std = HEAD_OUT_GAIN * (2.0 / (channels * k * k) as f64).sqrt();
                v.extend([w.with_init(Init::Normal { std }), b]);
            } else {
                let f = self.filters(channels);
                v.extend(ParamDecl::conv(&format!("{head}.conv"), channels, f, k));
                let [w, b] = ParamDecl::deconv(&format!("{head}.deconv"), f, channels, k);
                v.extend([w.with_init(Init::Zeros), b]);
            }
        }
        Ok(v)
    }

    pub fn param_count(&self, channels: usize) -> Result<usize> {
        Ok(self.decls("a", channels)?.iter().map(|d| d.shape.numel()).sum())
    }
}

/// Output `H_j` of head `j` (1-based) on `T∘`; same shape as the input.
pub fn head_forward<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    config: &AttentionConfig,
    j: usize,
    x: Var,
) -> Result<Var> {
    let k = *config
        .kernel_schedule()
        .get(j.wrapping_sub(1))
        .ok_or_else(|| Error::Config(format!("head index {j} out of range 1..={}", config.heads)))?;
    let head = format!("{prefix}.head{j}");
    if config.no_deconv {
        let h = layers::conv(g, p, &format!("{head}.conv"), x, (k - 1) / 2)?;
        return g.relu(h);
    }
    let s = g.shape(x);
    if k > s.h.min(s.w) {
        return Err(Error::Shape {
            op: "attention head",
            reason: format!("kernel {k}x{k} larger than spatial extent {}x{}", s.h, s.w),
        });
    }
    let h = layers::conv(g, p, &format!("{head}.conv"), x, 0)?;
    let h = g.relu(h)?;
    layers::deconv(g, p, &format!("{head}.deconv"), h)
}

/// Attention applied directly to `T∘`. Returns `(T∘ ⊙ A, A)`.
pub fn attention_forward<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    config: &AttentionConfig,
    t_cat: Var,
) -> Result<(Var, Var)> {
    config.validate_for(g.shape(t_cat))?;
    let mut sum = head_forward(g, p, prefix, config, 1, t_cat)?;
    for j in 2..=config.heads {
        let h = head_forward(g, p, prefix, config, j, t_cat)?;
        sum = g.add(sum, h)?;
    }
    let a = g.sigmoid(sum)?;
    let out = g.mul(t_cat, a)?;
    Ok((out, a))
}

/// Multimodal attention: concatenate the encodings along channels, attend.
pub fn mmhca_forward<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    config: &AttentionConfig,
    encodings: &[Var],
) -> Result<(Var, Var)> {
    let t_cat = g.concat_channels(encodings)?;
    attention_forward(g, p, prefix, config, t_cat)
}

/// Single-contrast form, `T∘ = T_1`.
pub fn mhca_forward<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    config: &AttentionConfig,
    encoding: Var,
) -> Result<(Var, Var)> {
    mmhca_forward(g, p, prefix, config, &[encoding])
}

/// Head-count variants at `r = 0.5`, plus the bottleneck and kernel-diversity
/// controls.
pub const TABLE_VARIANTS: [&str; 7] = [
    "1head_r0.5",
    "2heads_r0.5",
    "3heads_r0.5",
    "4heads_r0.5",
    "3heads_nodeconv",
    "4heads_1x1_r2",
    "4heads_r2",
];

/// Reduction-ratio sweep at three heads.
pub const SWEEP_VARIANTS: [&str; 5] = ["h3_r4", "h3_r2", "h3_r1", "h3_r0.5", "h3_r0.25"];

/// Resolve a named ablation variant.
pub fn ablation_variant(name: &str) -> Result<AttentionConfig> {
    let base = |heads, reduction| AttentionConfig {
        heads,
        reduction,
        no_deconv: false,
        uniform_kernel: None,
    };
    let cfg = match name {
        "1head_r0.5" => base(1, 0.5),
        "2heads_r0.5" => base(2, 0.5),
        "3heads_r0.5" => base(3, 0.5),
        "4heads_r0.5" => base(4, 0.5),
        "3heads_nodeconv" => AttentionConfig {
            no_deconv: true,
            ..base(3, 0.5)
        },
        "4heads_1x1_r2" => AttentionConfig {
            uniform_kernel: Some(1),
            ..base(4, 2.0)
        },
        "4heads_r2" => base(4, 2.0),
        _ => {
            let r = name
                .strip_prefix("h3_r")
                .and_then(|r| r.parse::<f64>().ok())
                .filter(|_| SWEEP_VARIANTS.contains(&name))
                .ok_or_else(|| Error::UnknownVariant(name.to_string()))?;
            base(3, r)
        }
    };
    Ok(cfg)
}

/// 8-bit level for an attention value: `round(255 · a)`, so 0.5 maps to 128.
pub fn attention_level(a: f64) -> u16 {
    (a.clamp(0.0, 1.0) * 255.0).round() as u16
}

/// Write one grayscale map per channel of sample `n` of `A`
/// (`channel_000.pgm`, ...) and a channel-mean map (`mean.pgm`).
pub fn export_attention<T: Real>(a: Option<&Tensor<T>>, n: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    let a = a.ok_or(Error::NoAttention)?;
    let s = a.shape();
    if n >= s.n {
        return Err(Error::Config(format!("sample {n} out of range for batch of {}", s.n)));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(s.c + 1);
    let mut mean = vec![0.0f64; s.plane()];
    for c in 0..s.c {
        let plane = a.plane(n, c);
        for (m, v) in mean.iter_mut().zip(plane) {
            *m += v.as_f64();
        }
        let img = GrayImage {
            width: s.w,
            height: s.h,
            maxval: 255,
            pixels: plane.iter().map(|v| attention_level(v.as_f64())).collect(),
        };
        let path = dir.join(format!("channel_{c:03}.pgm"));
        write_pgm(&path, &img)?;
        written.push(path);
    }
    let img = GrayImage {
        width: s.w,
        height: s.h,
        maxval: 255,
        pixels: mean.iter().map(|m| attention_level(m / s.c as f64)).collect(),
    };
    let path = dir.join("mean.pgm");
    write_pgm(&path, &img)?;
    written.push(path);
    Ok(written)
}
