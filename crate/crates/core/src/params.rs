//! Named learnable tensors.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Shape, Tensor};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with variance `2 / fan_in`.
    He { fan_in: usize },
    /// Zero-mean normal with the given standard deviation.
    Normal { std: f64 },
    Zeros,
}

/// Name, shape and initializer of one learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

impl ParamDecl {
    pub fn with_init(self, init: Init) -> Self {
        ParamDecl { init, ..self }
    }

    /// Weight `(out, in, k, k)` plus bias for a convolution.
    pub fn conv(prefix: &str, cin: usize, cout: usize, k: usize) -> [ParamDecl; 2] {
        [
            ParamDecl {
                name: format!("{prefix}.weight"),
                shape: Shape::new(cout, cin, k, k),
                init: Init::He { fan_in: cin * k * k },
            },
            ParamDecl {
                name: format!("{prefix}.bias"),
                shape: Shape::new(cout, 1, 1, 1),
                init: Init::Zeros,
            },
        ]
    }

    /// Weight `(in, out, k, k)` plus bias for a transposed convolution.
    /// Each output pixel gathers `in · k²` terms, which is the fan-in used.
    pub fn deconv(prefix: &str, cin: usize, cout: usize, k: usize) -> [ParamDecl; 2] {
        [
            ParamDecl {
                name: format!("{prefix}.weight"),
                shape: Shape::new(cin, cout, k, k),
                init: Init::He { fan_in: cin * k * k },
            },
            ParamDecl {
                name: format!("{prefix}.bias"),
                shape: Shape::new(cout, 1, 1, 1),
                init: Init::Zeros,
            },
        ]
    }
}

/// Ordered map from parameter name to tensor. Iteration is lexicographic.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T: Real = f32> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: BTreeMap::new(),
        }
    }

    /// Draw every declared tensor from a ChaCha stream seeded by `seed`.
    /// Tensors are drawn in lexicographic name order, so the result depends
    /// only on the declarations and the seed.
    pub fn init(decls: &[ParamDecl], seed: u64) -> Result<Self> {
        let mut sorted: Vec<&ParamDecl> = decls.iter().collect();
        sorted.sort_by(|a, b| a.name.cmp(&b.name));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        for d in sorted {
            let t = match d.init {
                Init::Zeros => Tensor::zeros(d.shape),
                Init::He { .. } | Init::Normal { .. } => {
                    let std = match d.init {
                        Init::He { fan_in } => (2.0 / fan_in.max(1) as f64).sqrt(),
                        Init::Normal { std } => std,
                        Init::Zeros => unreachable!(),
                    };
                    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                    let data = (0..d.shape.numel())
                        .map(|_| T::from_f64(normal.sample(&mut rng)))
                        .collect();
                    Tensor::new(d.shape, data)?
                }
            };
            set.insert(d.name.clone(), t)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Set every tensor whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().fill(T::zero());
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Register every tensor on `g` as a learnable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), g.param(v.clone())))
                .collect(),
        }
    }
}

/// Parameter name → graph variable, produced by [`ParamSet::bind`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
