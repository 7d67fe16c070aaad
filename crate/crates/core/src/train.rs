//! Patch-based training with Adam on an L1 loss, plus full-slice evaluation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::manifest::{Dataset, Sample, Split};
use crate::metrics::{psnr, ssim, ImageScore, MetricsReport};
use crate::network::{dihedral, forward_multimodal, self_ensemble, ModelSpec, SrModel};
use crate::params::ParamSet;
use crate::resample::{bicubic_upscale, make_lr};
use crate::tensor::{Real, Tensor};

/// Peak value for PSNR and SSIM on normalized images.
pub const PEAK: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// LR patch side; HR patches are `patch · scale`.
    pub patch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Validation runs every `val_fraction · steps` steps and at the end.
    pub val_fraction: f64,
    pub log_every: usize,
    pub precision: Precision,
    /// Wall-clock cap; training stops early (after a final validation) once exceeded.
    #[serde(default)]
    pub max_seconds: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch: 8,
            patch: 24,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            val_fraction: 0.05,
            log_every: 50,
            precision: Precision::F32,
            max_seconds: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps == 0 || self.batch == 0 || self.patch == 0 {
            return bad("steps, batch and patch must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 1.0) {
            return bad(format!("val_fraction must lie in (0, 1], got {}", self.val_fraction));
        }
        Ok(())
    }

    /// Step size in effect at 1-based step `step`: halved from the midpoint on.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step > self.steps / 2 {
            self.learning_rate * 0.5
        } else {
            self.learning_rate
        }
    }

    fn val_every(&self) -> usize {
        ((self.steps as f64 * self.val_fraction).round() as usize).max(1)
    }
}

/// One line of training output.
#[derive(Clone, Debug, PartialEq)]
pub enum LogEvent {
    Step {
        step: usize,
        loss: f64,
        lr: f64,
        elapsed_s: f64,
    },
    Validation {
        step: usize,
        psnr: f64,
        ssim: f64,
        best: bool,
        elapsed_s: f64,
    },
}

impl LogEvent {
    /// `key=value` pairs separated by spaces; the first key is always `step`.
    pub fn to_line(&self) -> String {
        match self {
            LogEvent::Step { step, loss, lr, elapsed_s } => {
                format!("step={step} loss={loss:.6e} lr={lr:.3e} elapsed_s={elapsed_s:.3}")
            }
            LogEvent::Validation {
                step,
                psnr,
                ssim,
                best,
                elapsed_s,
            } => format!(
                "step={step} val_psnr={psnr:.4} val_ssim={ssim:.6} best={best} elapsed_s={elapsed_s:.3}"
            ),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
    /// `(step, mean PSNR, mean SSIM)` of every validation pass.
    pub validations: Vec<(usize, f64, f64)>,
    pub final_model: SrModel<T>,
    /// Weights with the best validation PSNR (the final weights without a val split).
    pub best_model: SrModel<T>,
    pub best_step: usize,
    pub checkpoint: Checkpoint,
}

/// LR/HR pairs of one sample for the chosen model inputs.
struct Pair<T: Real> {
    lrs: Vec<Tensor<T>>,
    hr: Tensor<T>,
}

fn pair<T: Real>(s: &Sample<T>, inputs: &[usize], target: usize, scale: usize) -> Result<Pair<T>> {
    Ok(Pair {
        lrs: inputs
            .iter()
            .map(|&i| make_lr(&s.images[i], scale))
            .collect::<Result<_>>()?,
        hr: s.images[target].clone(),
    })
}

/// Check that `inputs` feeds `spec` and that the spec's target is the dataset target.
pub fn check_inputs<T: Real>(spec: &ModelSpec, ds: &Dataset<T>, inputs: &[usize]) -> Result<()> {
    spec.validate()?;
    if inputs.len() != spec.n_modalities {
        return Err(Error::Config(format!(
            "model expects {} modalities, {} selected",
            spec.n_modalities,
            inputs.len()
        )));
    }
    if let Some(&i) = inputs.iter().find(|&&i| i >= ds.modalities.len()) {
        return Err(Error::Config(format!("modality index {i} out of range")));
    }
    if inputs[spec.target_index] != ds.target {
        return Err(Error::Config(format!(
            "model target input is `{}` but the dataset target is `{}`",
            ds.modalities[inputs[spec.target_index]], ds.modalities[ds.target]
        )));
    }
    Ok(())
}

struct Adam<T: Real> {
    m: ParamSet<T>,
    v: ParamSet<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new(params: &ParamSet<T>) -> Result<Self> {
        let mut m = ParamSet::new();
        for (name, t) in params.iter() {
            m.insert(name, t.zeros_like())?;
        }
        Ok(Adam { v: m.clone(), m, t: 0 })
    }

    fn update(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64, cfg: &TrainConfig) -> Result<()> {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let step = lr * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            let m = self.m.get_mut(name)?;
            let v = self.v.get_mut(name)?;
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g.as_f64();
                let mi = b1 * m.as_f64() + (1.0 - b1) * g;
                let vi = b2 * v.as_f64() + (1.0 - b2) * g * g;
                *m = T::from_f64(mi);
                *v = T::from_f64(vi);
                *p = T::from_f64(p.as_f64() - step * mi / (vi.sqrt() + cfg.epsilon));
            }
        }
        Ok(())
    }

    fn state(&self) -> Result<ParamSet<f32>> {
        let mut out = ParamSet::new();
        for (name, t) in self.m.iter() {
            out.insert(format!("adam.m.{name}"), t.cast())?;
        }
        for (name, t) in self.v.iter() {
            out.insert(format!("adam.v.{name}"), t.cast())?;
        }
        Ok(out)
    }
}

/// One forward/backward pass on a batch; returns the loss and parameter gradients.
fn loss_and_grads<T: Real>(
    spec: &ModelSpec,
    params: &ParamSet<T>,
    lrs: &[Tensor<T>],
    hr: &Tensor<T>,
) -> Result<(f64, ParamSet<T>)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let inputs: Vec<_> = lrs.iter().map(|t| g.constant(t.clone())).collect();
    let out = forward_multimodal(&mut g, &bound, spec, &inputs)?;
    let loss = g.mean_abs_error(out.hr, hr)?;
    let value = g.value(loss).data()[0].as_f64();
    let mut grads = g.backward(loss)?;
    let mut set = ParamSet::new();
    for (name, var) in bound.iter() {
        let t = grads.take(var).unwrap_or_else(|| params.get(name).expect("bound from params").zeros_like());
        set.insert(name, t)?;
    }
    Ok((value, set))
}

/// Train `spec` on the train split of `ds`, feeding dataset modalities `inputs`.
pub fn train<T: Real>(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    ds: &Dataset<T>,
    inputs: &[usize],
    mut log: impl FnMut(&LogEvent),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_inputs(spec, ds, inputs)?;
    let train_set = ds.split(Split::Train);
    if train_set.is_empty() {
        return Err(Error::Manifest("train split is empty".into()));
    }
    let val_set = ds.split(Split::Val);
    let pairs: Vec<Pair<T>> = train_set
        .iter()
        .map(|s| pair(s, inputs, ds.target, spec.scale))
        .collect::<Result<_>>()?;
    let lr_size = pairs[0].lrs[0].shape();
    if cfg.patch > lr_size.h || cfg.patch > lr_size.w {
        return Err(Error::Config(format!(
            "patch {} larger than LR images {}x{}",
            cfg.patch, lr_size.h, lr_size.w
        )));
    }

    let mut model = SrModel::<T>::new(spec.clone(), cfg.seed)?;
    let mut adam = Adam::new(&model.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let started = Instant::now();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut validations = Vec::new();
    let mut best: Option<(f64, usize, ParamSet<T>)> = None;
    let val_every = cfg.val_every();
    let s = spec.scale;
    let p = cfg.patch;

    for step in 1..=cfg.steps {
        let mut lr_parts: Vec<Vec<Tensor<T>>> = vec![Vec::with_capacity(cfg.batch); inputs.len()];
        let mut hr_parts = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let pr = &pairs[rng.random_range(0..pairs.len())];
            let sh = pr.lrs[0].shape();
            let y = rng.random_range(0..=sh.h - p);
            let x = rng.random_range(0..=sh.w - p);
            let t = rng.random_range(0..8);
            for (parts, lr) in lr_parts.iter_mut().zip(&pr.lrs) {
                parts.push(dihedral(&lr.crop(y, x, p, p)?, t)?);
            }
            hr_parts.push(dihedral(&pr.hr.crop(y * s, x * s, p * s, p * s)?, t)?);
        }
        let lrs: Vec<Tensor<T>> = lr_parts.iter().map(|v| Tensor::stack(v)).collect::<Result<_>>()?;
        let hr = Tensor::stack(&hr_parts)?;
        let (loss, grads) = match loss_and_grads(spec, &model.params, &lrs, &hr) {
            Ok(r) => r,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let lr = cfg.lr_at(step);
        adam.update(&mut model.params, &grads, lr, cfg)?;
        if model.params.iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Diverged { step });
        }
        losses.push(loss);
        let elapsed_s = started.elapsed().as_secs_f64();
        let last = step == cfg.steps || cfg.max_seconds.is_some_and(|m| elapsed_s > m);
        if step % cfg.log_every.max(1) == 0 || step == 1 || last {
            log(&LogEvent::Step {
                step,
                loss,
                lr,
                elapsed_s,
            });
        }
        if !val_set.is_empty() && (step % val_every == 0 || last) {
            let report = match evaluate(&model, inputs, ds.target, &val_set, false, "val") {
                Ok(r) => r,
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { step }),
                Err(e) => return Err(e),
            };
            let improved = best.as_ref().is_none_or(|(b, _, _)| report.mean_psnr > *b);
            if improved {
                best = Some((report.mean_psnr, step, model.params.clone()));
            }
            validations.push((step, report.mean_psnr, report.mean_ssim));
            log(&LogEvent::Validation {
                step,
                psnr: report.mean_psnr,
                ssim: report.mean_ssim,
                best: improved,
                elapsed_s: started.elapsed().as_secs_f64(),
            });
        }
        if last {
            break;
        }
    }

    let (best_step, best_params) = match best {
        Some((_, step, params)) => (step, params),
        None => (losses.len(), model.params.clone()),
    };
    let best_model = SrModel {
        spec: spec.clone(),
        params: best_params,
    };
    let checkpoint = Checkpoint {
        spec: spec.clone(),
        inputs: inputs.iter().map(|&i| ds.modalities[i].clone()).collect(),
        step: best_step as u64,
        params: best_model.params.cast(),
        optimizer: adam.state()?,
    };
    Ok(TrainOutcome {
        losses,
        validations,
        final_model: model,
        best_model,
        best_step,
        checkpoint,
    })
}

/// Full-slice PSNR/SSIM of `model` on `samples`, optionally self-ensembled.
pub fn evaluate<T: Real>(
    model: &SrModel<T>,
    inputs: &[usize],
    target: usize,
    samples: &[&Sample<T>],
    ensemble: bool,
    label: &str,
) -> Result<MetricsReport> {
    let mut scores = Vec::with_capacity(samples.len());
    for s in samples {
        let pr = pair(s, inputs, target, model.spec.scale)?;
        let pred = if ensemble {
            self_ensemble(|x| model.predict(x), &pr.lrs)?
        } else {
            model.predict(&pr.lrs)?
        };
        scores.push(ImageScore {
            id: s.id.clone(),
            psnr: psnr(&pred, &pr.hr, PEAK)?,
            ssim: ssim(&pred, &pr.hr, PEAK)?,
        });
    }
    let config = serde_json::json!({
        "spec": model.spec,
        "self_ensemble": ensemble,
    });
    Ok(MetricsReport::new(label, scores, config))
}

/// Bicubic-upscaling baseline on the target modality.
pub fn evaluate_bicubic<T: Real>(ds: &Dataset<T>, samples: &[&Sample<T>], scale: usize) -> Result<MetricsReport> {
    let mut scores = Vec::with_capacity(samples.len());
    for s in samples {
        let hr = &s.images[ds.target];
        let up = bicubic_upscale(&make_lr(hr, scale)?, scale)?;
        let up = up.map(|v| v.max(T::zero()).min(T::one()));
        scores.push(ImageScore {
            id: s.id.clone(),
            psnr: psnr(&up, hr, PEAK)?,
            ssim: ssim(&up, hr, PEAK)?,
        });
    }
    Ok(MetricsReport::new(
        "bicubic",
        scores,
        serde_json::json!({ "baseline": "bicubic", "scale": scale }),
    ))
}
