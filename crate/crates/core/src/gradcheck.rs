//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::network::{forward_multimodal, init_params, ModelSpec};
use crate::params::{Bound, ParamSet};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so gradients that are
    /// numerically zero compare on an absolute scale.
    pub floor: f64,
    /// Check at most this many elements per tensor (sampled with `seed`).
    pub max_elements: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_elements: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn evaluate<F>(f: &F, params: &ParamSet<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = f(&mut g, &bound)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::Shape {
            op: "gradcheck",
            reason: format!("objective must be scalar, got {}", v.shape()),
        });
    }
    let v = v.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "gradcheck" });
    }
    Ok(v)
}

/// Reverse-mode gradient of a scalar objective for every parameter.
pub fn analytic_grads<F>(f: &F, params: &ParamSet<f64>) -> Result<ParamSet<f64>>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = f(&mut g, &bound)?;
    let mut grads = g.backward(out)?;
    let mut set = ParamSet::new();
    for (name, var) in bound.iter() {
        let t = grads
            .take(var)
            .unwrap_or_else(|| Tensor::zeros(params.get(name).expect("bound from params").shape()));
        set.insert(name, t)?;
    }
    Ok(set)
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare supplied analytic gradients against central differences.
///
/// An element that misses the tolerance at `step` is re-probed at `step/10`,
/// `step/100` and `10·step` and keeps its smallest error. A genuine backward
/// bug is step-independent and still fails; a perturbation straddling a ReLU
/// kink shrinks away at the smaller steps, and cancellation noise on tiny
/// gradients shrinks away at the larger one.
pub fn check_against_numeric<F>(
    f: &F,
    params: &ParamSet<f64>,
    analytic: &ParamSet<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    evaluate(f, params)?;
    // One taped forward pass; each probe re-runs only what depends on the
    // perturbed tensor.
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let root = f(&mut g, &bound)?;
    let scalar = |t: Tensor<f64>| -> Result<f64> {
        let v = t.data()[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { op: "gradcheck" })
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    for (name, t) in params.iter() {
        let grad = analytic.get(name)?;
        let leaf = bound.var(name)?;
        let mut probe = t.clone();
        let indices: Vec<usize> = match opts.max_elements {
            Some(m) if m < t.len() => {
                let mut v = sample(&mut rng, t.len(), m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..t.len()).collect(),
        };
        let mut worst: f64 = 0.0;
        for &i in &indices {
            let base = t.data()[i];
            let a = grad.data()[i];
            let mut best = f64::INFINITY;
            for factor in [1.0, 0.1, 0.01, 10.0] {
                let h = opts.step * factor;
                probe.data_mut()[i] = base + h;
                let plus = scalar(g.replay(leaf, &probe, root)?)?;
                probe.data_mut()[i] = base - h;
                let minus = scalar(g.replay(leaf, &probe, root)?)?;
                probe.data_mut()[i] = base;
                let numeric = (plus - minus) / (2.0 * h);
                best = best.min(rel_error(a, numeric, opts.floor));
                if best < opts.tolerance {
                    break;
                }
            }
            worst = worst.max(best);
        }
        entries.push(ParamCheck {
            name: name.to_string(),
            checked: indices.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        entries,
        tolerance: opts.tolerance,
    })
}

/// Analytic-versus-central-difference check of a scalar objective.
pub fn gradcheck<F>(f: F, params: &ParamSet<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    let analytic = analytic_grads(&f, params)?;
    check_against_numeric(&f, params, &analytic, opts)
}

/// End-to-end check of a whole network: random `batch × 1 × patch × patch`
/// inputs in `[0.1, 1]`, seeded weights plus uniform jitter in `[-0.1, 0.1]`,
/// and the objective
/// `Σ HR ⊙ R` for a fixed random `R` in `[-1, 1]`.
pub fn check_model(
    spec: &ModelSpec,
    patch: usize,
    batch: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    spec.validate()?;
    let mut params = init_params::<f64>(spec, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(7);
    // Zero-initialized tensors would leave whole paths without gradient, so
    // jitter everything.
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let lr_shape = Shape::new(batch, 1, patch, patch);
    let inputs: Vec<Tensor<f64>> = (0..spec.n_modalities)
        .map(|_| Tensor::from_fn(lr_shape, |_, _, _, _| rng.random_range(0.1..1.0)))
        .collect();
    let hr_shape = Shape::new(batch, 1, patch * spec.scale, patch * spec.scale);
    let weights = Tensor::from_fn(hr_shape, |_, _, _, _| rng.random_range(-1.0..1.0));
    let objective = |g: &mut Graph<f64>, p: &Bound| -> Result<Var> {
        let lrs: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = forward_multimodal(g, p, spec, &lrs)?;
        let r = g.constant(weights.clone());
        let weighted = g.mul(out.hr, r)?;
        g.sum(weighted)
    };
    gradcheck(objective, &params, opts)
}
