//! Building blocks shared by the host networks and the attention module.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, Init, ParamDecl};
use crate::tensor::Real;

/// Static description of one parameterized layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv { cin: usize, cout: usize, k: usize },
    Deconv { cin: usize, cout: usize, k: usize },
    ResBlock { width: usize },
    /// `conv3×3 (F→s²F) + pixel_shuffle(s)` stages followed by `conv3×3 (F→1)`.
    Upsampler { width: usize, scale: usize },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv { k, cin, cout } | LayerSpec::Deconv { k, cin, cout } => {
                if k == 0 || k % 2 == 0 {
                    return Err(Error::Config(format!("kernel size must be odd and >= 1, got {k}")));
                }
                if cin == 0 || cout == 0 {
                    return Err(Error::Config("channel counts must be positive".into()));
                }
            }
            LayerSpec::ResBlock { width: 0 } => {
                return Err(Error::Config("residual block width must be positive".into()));
            }
            LayerSpec::Upsampler { scale, .. } if scale != 2 && scale != 4 => {
                return Err(Error::Config(format!("unsupported upscale factor {scale}")));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn decls(&self, prefix: &str) -> Result<Vec<ParamDecl>> {
        self.validate()?;
        Ok(match *self {
            LayerSpec::Conv { cin, cout, k } => ParamDecl::conv(prefix, cin, cout, k).to_vec(),
            LayerSpec::Deconv { cin, cout, k } => ParamDecl::deconv(prefix, cin, cout, k).to_vec(),
            LayerSpec::ResBlock { width } => {
                let mut v = ParamDecl::conv(&format!("{prefix}.conv1"), width, width, 3).to_vec();
                v.extend(ParamDecl::conv(&format!("{prefix}.conv2"), width, width, 3));
                v
            }
            LayerSpec::Upsampler { width, scale } => {
                let mut v = Vec::new();
                for s in 0..upsample_stages(scale)? {
                    v.extend(ParamDecl::conv(&format!("{prefix}.stage{s}"), width, 4 * width, 3));
                }
                // Zero output weights, so training starts from the global skip.
                let [w, b] = ParamDecl::conv(&format!("{prefix}.out"), width, 1, 3);
                v.extend([w.with_init(Init::Zeros), b]);
                v
            }
        })
    }
}

fn upsample_stages(scale: usize) -> Result<usize> {
    match scale {
        2 => Ok(1),
        4 => Ok(2),
        s => Err(Error::Config(format!("unsupported upscale factor {s}"))),
    }
}

pub fn conv<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var, padding: usize) -> Result<Var> {
    let w = p.var(&format!("{prefix}.weight"))?;
    let b = p.var(&format!("{prefix}.bias"))?;
    g.conv2d(x, w, Some(b), padding)
}

pub fn deconv<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{prefix}.weight"))?;
    let b = p.var(&format!("{prefix}.bias"))?;
    g.conv_transpose2d(x, w, Some(b))
}

/// `x + res_scale · conv2(relu(conv1(x)))`, both convs 3×3 with padding 1.
pub fn resblock<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var, res_scale: f64) -> Result<Var> {
    let h = conv(g, p, &format!("{prefix}.conv1"), x, 1)?;
    let h = g.relu(h)?;
    let mut h = conv(g, p, &format!("{prefix}.conv2"), h, 1)?;
    if res_scale != 1.0 {
        h = g.scale(h, res_scale)?;
    }
    g.add(x, h)
}

/// Sub-pixel upsampler ending in a single-channel image.
pub fn upsampler<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var, scale: usize) -> Result<Var> {
    let mut h = x;
    for s in 0..upsample_stages(scale)? {
        h = conv(g, p, &format!("{prefix}.stage{s}"), h, 1)?;
        h = g.pixel_shuffle(h, 2)?;
    }
    conv(g, p, &format!("{prefix}.out"), h, 1)
}
