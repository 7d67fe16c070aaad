//! Host super-resolution networks with optional attention.
//!
//! Every modality gets its own encoder branch (head conv plus residual
//! blocks for EDSR-lite, three plain convs for ESPC-lite). Branch outputs
//! are concatenated, attended, fused back to `F` channels by a 3×3 conv
//! and upsampled to a single-channel residual, which is optionally added
//! to a bicubic upscale of the target modality.

use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{self, LayerSpec};
use crate::params::{Bound, ParamDecl, ParamSet};
use crate::resample::bicubic_upscale;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Host {
    EdsrLite,
    EspcLite,
}

impl std::str::FromStr for Host {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edsr" | "edsr_lite" | "edsr-lite" => Ok(Host::EdsrLite),
            "espc" | "espc_lite" | "espc-lite" => Ok(Host::EspcLite),
            _ => Err(Error::Config(format!("unknown host network `{s}`"))),
        }
    }
}

/// Where attention modules sit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// One module per trunk block inside every branch, each with its own weights.
    PerBlock,
    /// A single module on the concatenated branch outputs.
    AfterConcat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub host: Host,
    pub n_modalities: usize,
    pub target_index: usize,
    pub scale: usize,
    pub width: usize,
    pub blocks: usize,
    pub attention: Option<AttentionConfig>,
    /// `None` picks per-block for single-contrast, after-concat otherwise.
    #[serde(default)]
    pub placement: Option<Placement>,
    pub global_skip: bool,
    /// Residual-branch multiplier in EDSR blocks.
    #[serde(default = "one")]
    pub res_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            host: Host::EdsrLite,
            n_modalities: 2,
            target_index: 0,
            scale: 2,
            width: 16,
            blocks: 2,
            attention: Some(AttentionConfig::default()),
            placement: None,
            global_skip: true,
            res_scale: 1.0,
        }
    }
}

impl ModelSpec {
    /// The small configuration used for end-to-end gradient checks.
    pub fn toy() -> Self {
        ModelSpec {
            width: 8,
            blocks: 2,
            ..ModelSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modalities == 0 {
            return Err(Error::Config("need at least one modality".into()));
        }
        if self.target_index >= self.n_modalities {
            return Err(Error::Config(format!(
                "target index {} out of range for {} modalities",
                self.target_index, self.n_modalities
            )));
        }
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::Config(format!("unsupported scale {}", self.scale)));
        }
        if self.width < 4 {
            return Err(Error::Config(format!("feature width must be >= 4, got {}", self.width)));
        }
        if self.blocks == 0 {
            return Err(Error::Config("need at least one trunk block".into()));
        }
        if let Some(a) = &self.attention {
            a.validate()?;
        }
        Ok(())
    }

    pub fn placement(&self) -> Placement {
        self.placement.unwrap_or(if self.n_modalities == 1 {
            Placement::PerBlock
        } else {
            Placement::AfterConcat
        })
    }

    fn trunk_blocks(&self) -> usize {
        match self.host {
            Host::EdsrLite => self.blocks,
            Host::EspcLite => 3,
        }
    }

    fn block_prefix(&self, branch: usize, b: usize) -> String {
        match self.host {
            Host::EdsrLite => format!("branch{branch}.res{b}"),
            Host::EspcLite => format!("branch{branch}.conv{b}"),
        }
    }

    /// Every learnable tensor of the network.
    pub fn decls(&self) -> Result<Vec<ParamDecl>> {
        self.validate()?;
        let f = self.width;
        let per_block = self.placement() == Placement::PerBlock;
        let mut v = Vec::new();
        for i in 0..self.n_modalities {
            match self.host {
                Host::EdsrLite => {
                    v.extend(LayerSpec::Conv { cin: 1, cout: f, k: 3 }.decls(&format!("branch{i}.head"))?);
                    for b in 0..self.blocks {
                        v.extend(LayerSpec::ResBlock { width: f }.decls(&self.block_prefix(i, b))?);
                    }
                }
                Host::EspcLite => {
                    for b in 0..3 {
                        let cin = if b == 0 { 1 } else { f };
                        v.extend(LayerSpec::Conv { cin, cout: f, k: 3 }.decls(&self.block_prefix(i, b))?);
                    }
                }
            }
            if let (true, Some(a)) = (per_block, &self.attention) {
                for b in 0..self.trunk_blocks() {
                    v.extend(a.decls(&format!("{}.attn", self.block_prefix(i, b)), f)?);
                }
            }
        }
        if let (false, Some(a)) = (per_block, &self.attention) {
            v.extend(a.decls("attn", self.n_modalities * f)?);
        }
        v.extend(LayerSpec::Conv {
            cin: self.n_modalities * f,
            cout: f,
            k: 3,
        }
        .decls("fusion")?);
        v.extend(LayerSpec::Upsampler { width: f, scale: self.scale }.decls("up")?);
        Ok(v)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.decls()?.iter().map(|d| d.shape.numel()).sum())
    }
}

/// Seeded He-normal weights, zero biases.
pub fn init_params<T: Real>(spec: &ModelSpec, seed: u64) -> Result<ParamSet<T>> {
    ParamSet::init(&spec.decls()?, seed)
}

/// Graph outputs of one forward pass.
pub struct Forward {
    pub hr: Var,
    /// Attention tensors `A`, in module order.
    pub attention: Vec<Var>,
}

/// Branch encoder `f_i`: `N×1×p×p → N×F×p×p`.
pub fn encode_branch<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    spec: &ModelSpec,
    i: usize,
    lr: Var,
    attention_out: &mut Vec<Var>,
) -> Result<Var> {
    if g.shape(lr).c != 1 {
        return Err(Error::Shape {
            op: "encode_branch",
            reason: format!("expected single-channel input, got {}", g.shape(lr)),
        });
    }
    let per_block = spec.placement() == Placement::PerBlock;
    let mut h = match spec.host {
        Host::EdsrLite => layers::conv(g, p, &format!("branch{i}.head"), lr, 1)?,
        Host::EspcLite => lr,
    };
    for b in 0..spec.trunk_blocks() {
        let prefix = spec.block_prefix(i, b);
        h = match spec.host {
            Host::EdsrLite => layers::resblock(g, p, &prefix, h, spec.res_scale)?,
            Host::EspcLite => {
                let c = layers::conv(g, p, &prefix, h, 1)?;
                g.relu(c)?
            }
        };
        if let (true, Some(a)) = (per_block, &spec.attention) {
            let (t, att) = attention::mhca_forward(g, p, &format!("{prefix}.attn"), a, h)?;
            attention_out.push(att);
            h = t;
        }
    }
    Ok(h)
}

/// End-to-end forward pass; `lrs` holds one `N×1×p×p` input per modality.
/// The returned HR estimate is unclamped.
pub fn forward_multimodal<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    spec: &ModelSpec,
    lrs: &[Var],
) -> Result<Forward> {
    spec.validate()?;
    if lrs.len() != spec.n_modalities {
        return Err(Error::Config(format!(
            "model expects {} modalities, got {}",
            spec.n_modalities,
            lrs.len()
        )));
    }
    let s0 = g.shape(lrs[0]);
    for &lr in lrs {
        if g.shape(lr) != s0 {
            return Err(Error::Dimension {
                op: "forward_multimodal",
                lhs: s0.dims(),
                rhs: g.shape(lr).dims(),
            });
        }
    }
    let mut attention_maps = Vec::new();
    let mut encodings = Vec::with_capacity(lrs.len());
    for (i, &lr) in lrs.iter().enumerate() {
        encodings.push(encode_branch(g, p, spec, i, lr, &mut attention_maps)?);
    }
    let mut t = g.concat_channels(&encodings)?;
    if let (Placement::AfterConcat, Some(a)) = (spec.placement(), &spec.attention) {
        let (out, att) = attention::attention_forward(g, p, "attn", a, t)?;
        attention_maps.push(att);
        t = out;
    }
    let fused = layers::conv(g, p, "fusion", t, 1)?;
    let mut hr = layers::upsampler(g, p, "up", fused, spec.scale)?;
    if spec.global_skip {
        let base = bicubic_upscale(g.value(lrs[spec.target_index]), spec.scale)?;
        let base = g.constant(base);
        hr = g.add(hr, base)?;
    }
    Ok(Forward {
        hr,
        attention: attention_maps,
    })
}

/// Inference result with the HR estimate clamped to `[0, 1]`.
pub struct Inference<T: Real> {
    pub hr: Tensor<T>,
    pub attention: Vec<Tensor<T>>,
}

/// A spec together with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SrModel<T: Real = f32> {
    pub spec: ModelSpec,
    pub params: ParamSet<T>,
}

impl<T: Real> SrModel<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed)?;
        Ok(SrModel { spec, params })
    }

    pub fn infer(&self, lrs: &[Tensor<T>]) -> Result<Inference<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let inputs: Vec<Var> = lrs.iter().map(|t| g.constant(t.clone())).collect();
        let out = forward_multimodal(&mut g, &bound, &self.spec, &inputs)?;
        Ok(Inference {
            hr: g.value(out.hr).map(|v| v.max(T::zero()).min(T::one())),
            attention: out.attention.iter().map(|&a| g.value(a).clone()).collect(),
        })
    }

    pub fn predict(&self, lrs: &[Tensor<T>]) -> Result<Tensor<T>> {
        Ok(self.infer(lrs)?.hr)
    }
}

/// Apply dihedral transform `t ∈ 0..8`: optional horizontal flip (`t ≥ 4`)
/// followed by `t mod 4` counter-clockwise quarter turns.
pub fn dihedral<T: Real>(x: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.h != s.w {
        return Err(Error::Shape {
            op: "dihedral",
            reason: format!("square input required, got {}x{}", s.h, s.w),
        });
    }
    let mut out = if t >= 4 { flip(x) } else { x.clone() };
    for _ in 0..t % 4 {
        out = rot90(&out);
    }
    Ok(out)
}

/// Inverse of [`dihedral`].
pub fn dihedral_inverse<T: Real>(y: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    let mut out = dihedral(y, (4 - t % 4) % 4)?;
    if t >= 4 {
        out = flip(&out);
    }
    Ok(out)
}

fn flip<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, y, xx| x.at(n, c, y, s.w - 1 - xx))
}

fn rot90<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |n, c, y, xx| x.at(n, c, xx, s.w - 1 - y))
}

/// Geometric self-ensemble: run `forward` on all 8 dihedral transforms of
/// the inputs, undo each transform on the output, and average.
pub fn self_ensemble<T: Real, F>(forward: F, lrs: &[Tensor<T>]) -> Result<Tensor<T>>
where
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let mut acc: Option<Vec<f64>> = None;
    let mut shape = None;
    for t in 0..8 {
        let inputs = lrs.iter().map(|x| dihedral(x, t)).collect::<Result<Vec<_>>>()?;
        let out = dihedral_inverse(&forward(&inputs)?, t)?;
        shape = Some(out.shape());
        match &mut acc {
            None => acc = Some(out.data().iter().map(|v| v.as_f64()).collect()),
            Some(a) => {
                for (s, v) in a.iter_mut().zip(out.data()) {
                    *s += v.as_f64();
                }
            }
        }
    }
    let data = acc
        .unwrap_or_default()
        .into_iter()
        .map(|v| T::from_f64(v / 8.0))
        .collect();
    Tensor::new(shape.expect("eight members ran"), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr(seed: f64, p: usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, 1, p, p), |_, _, y, x| {
            0.5 + 0.4 * ((y as f64 * 0.9 + x as f64 * 0.4) * seed).sin()
        })
    }

    #[test]
    fn spec_validation() {
        let mut s = ModelSpec::default();
        assert!(s.validate().is_ok());
        s.target_index = 2;
        assert!(s.validate().is_err());
        let s = ModelSpec { scale: 3, ..ModelSpec::default() };
        assert!(s.validate().is_err());
        let s = ModelSpec { width: 3, ..ModelSpec::default() };
        assert!(s.validate().is_err());
        assert_eq!("espc".parse::<Host>().unwrap(), Host::EspcLite);
        assert!("srcnn".parse::<Host>().is_err());
    }

    #[test]
    fn encode_branch_shape_and_determinism() {
        let spec = ModelSpec {
            width: 64,
            blocks: 1,
            attention: None,
            ..ModelSpec::default()
        };
        let mut params = init_params::<f32>(&spec, 1).unwrap();
        // copy branch0 weights into branch1
        let copies: Vec<_> = params
            .iter()
            .filter(|(n, _)| n.starts_with("branch0."))
            .map(|(n, t)| (n.replacen("branch0.", "branch1.", 1), t.clone()))
            .collect();
        for (n, t) in copies {
            *params.get_mut(&n).unwrap() = t;
        }
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let x = g.constant(lr(1.0, 24).cast());
        let mut att = Vec::new();
        let t0 = encode_branch(&mut g, &b, &spec, 0, x, &mut att).unwrap();
        let t1 = encode_branch(&mut g, &b, &spec, 1, x, &mut att).unwrap();
        assert_eq!(g.shape(t0), Shape::new(1, 64, 24, 24));
        assert_eq!(g.value(t0), g.value(t1));
        let bad = g.constant(Tensor::zeros(Shape::new(1, 2, 24, 24)));
        assert!(encode_branch(&mut g, &b, &spec, 0, bad, &mut att).is_err());
    }

    #[test]
    fn multimodal_output_shape() {
        for (host, scale) in [(Host::EdsrLite, 2), (Host::EspcLite, 4)] {
            let spec = ModelSpec {
                host,
                scale,
                width: 8,
                ..ModelSpec::default()
            };
            let m = SrModel::<f64>::new(spec, 3).unwrap();
            let out = m.infer(&[lr(1.0, 24), lr(1.3, 24)]).unwrap();
            assert_eq!(out.hr.shape(), Shape::new(1, 1, 24 * scale, 24 * scale));
            assert_eq!(out.attention.len(), 1);
            assert_eq!(out.attention[0].shape(), Shape::new(1, 16, 24, 24));
            assert!(out.hr.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn modality_count_and_shape_mismatch() {
        let m = SrModel::<f64>::new(ModelSpec::toy(), 3).unwrap();
        assert!(m.infer(&[lr(1.0, 8)]).is_err());
        assert!(m.infer(&[lr(1.0, 8), lr(1.0, 9)]).is_err());
    }

    #[test]
    fn single_contrast_places_attention_after_every_block() {
        let spec = ModelSpec {
            n_modalities: 1,
            blocks: 3,
            width: 4,
            ..ModelSpec::default()
        };
        assert_eq!(spec.placement(), Placement::PerBlock);
        let names: Vec<_> = spec.decls().unwrap().into_iter().map(|d| d.name).collect();
        for b in 0..3 {
            assert!(names.contains(&format!("branch0.res{b}.attn.head3.deconv.weight")));
        }
        assert!(!names.iter().any(|n| n.starts_with("attn.")));
        let m = SrModel::<f64>::new(spec, 1).unwrap();
        assert_eq!(m.infer(&[lr(1.0, 8)]).unwrap().attention.len(), 3);
    }

    #[test]
    fn zero_network_with_skip_is_bicubic() {
        let spec = ModelSpec::toy();
        let mut m = SrModel::<f64>::new(spec, 3).unwrap();
        m.params.zero_prefix("");
        let inputs = [lr(1.0, 8), lr(2.0, 8)];
        let out = m.predict(&inputs).unwrap();
        let expect = bicubic_upscale(&inputs[0], 2).unwrap().map(|v| v.clamp(0.0, 1.0));
        assert_eq!(out, expect);
    }

    #[test]
    fn attention_free_concat_runs() {
        let spec = ModelSpec {
            attention: None,
            ..ModelSpec::toy()
        };
        let m = SrModel::<f64>::new(spec.clone(), 3).unwrap();
        let out = m.infer(&[lr(1.0, 8), lr(2.0, 8)]).unwrap();
        assert!(out.attention.is_empty());
        assert!(spec.param_count().unwrap() < ModelSpec::toy().param_count().unwrap());
    }

    #[test]
    fn dihedral_group_round_trips() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 5, 5), |_, c, y, x| (c * 100 + y * 5 + x) as f64);
        for t in 0..8 {
            let y = dihedral(&x, t).unwrap();
            assert_eq!(dihedral_inverse(&y, t).unwrap(), x);
        }
        let distinct: std::collections::HashSet<Vec<u64>> = (0..8)
            .map(|t| dihedral(&x, t).unwrap().data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(distinct.len(), 8);
        assert!(dihedral(&Tensor::<f64>::zeros(Shape::new(1, 1, 2, 3)), 1).is_err());
    }

    fn nearest(x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let s = x[0].shape();
        Ok(Tensor::from_fn(Shape::new(s.n, 1, s.h * 2, s.w * 2), |n, _, y, xx| {
            x[0].at(n, 0, y / 2, xx / 2)
        }))
    }

    #[test]
    fn ensemble_of_constant_input() {
        let c = Tensor::full(Shape::new(1, 1, 8, 8), 0.4);
        let plain = nearest(std::slice::from_ref(&c)).unwrap();
        let ens = self_ensemble(nearest, &[c]).unwrap();
        assert!(ens.max_abs_diff(&plain) < 1e-15);
        assert!(self_ensemble(nearest, &[Tensor::zeros(Shape::new(1, 1, 4, 5))]).is_err());
    }
}
