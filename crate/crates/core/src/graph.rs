//! Reverse-mode automatic differentiation over rank-4 tensors.
//!
//! A [`Graph`] is a tape: every op appends one node holding its output
//! value and a record of its inputs. Inputs always precede their consumers,
//! so [`Graph::backward`] simply walks the tape in reverse insertion order.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        padding: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    PixelShuffle(Var, usize),
    Sum(Var),
    MeanAbsError(Var, Tensor<f64>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().dims(),
            rhs: b.shape().dims(),
        });
    }
    Ok(())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.shape(), data).expect("shapes checked by caller")
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        None => *slot = Some(g),
    }
}

fn bias_slice<T: Real>(t: &Tensor<T>) -> &[T] {
    t.data()
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Concat(_) => "concat_channels",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::PixelShuffle(..) => "pixel_shuffle",
            Op::Sum(_) => "sum",
            Op::MeanAbsError(..) => "mean_abs_error",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _) | Op::Relu(x) | Op::Sigmoid(x) | Op::PixelShuffle(x, _) | Op::Sum(x) => vec![*x],
            Op::MeanAbsError(x, _) => vec![*x],
            Op::Concat(parts) => parts.clone(),
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(*b);
                v
            }
        }
    }
}

/// Forward value of `op`, reading input values through `get`.
fn eval<'a, T: Real>(op: &Op, get: impl Fn(Var) -> &'a Tensor<T>) -> Result<Tensor<T>> {
    Ok(match op {
        Op::Leaf => {
            return Err(Error::Config("leaves have no forward rule".into()));
        }
        Op::Add(a, b) => {
            let (ta, tb) = (get(*a), get(*b));
            same_shape("add", ta, tb)?;
            zip_map(ta, tb, |p, q| p + q)
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (get(*a), get(*b));
            same_shape("mul", ta, tb)?;
            zip_map(ta, tb, |p, q| p * q)
        }
        Op::Scale(a, k) => {
            let kt = T::from_f64(*k);
            get(*a).map(|v| v * kt)
        }
        Op::Concat(parts) => {
            let s0 = get(parts[0]).shape();
            let mut c = 0;
            for &p in parts {
                let s = get(p).shape();
                if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                    return Err(Error::Dimension {
                        op: "concat_channels",
                        lhs: s0.dims(),
                        rhs: s.dims(),
                    });
                }
                c += s.c;
            }
            let os = Shape::new(s0.n, c, s0.h, s0.w);
            let mut data = Vec::with_capacity(os.numel());
            for n in 0..s0.n {
                for &p in parts {
                    let t = get(p);
                    let per = t.shape().c * t.shape().plane();
                    data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
                }
            }
            Tensor::new(os, data)?
        }
        Op::Relu(x) => get(*x).map(|v| if v > T::zero() { v } else { T::zero() }),
        Op::Sigmoid(x) => get(*x).map(kernels::sigmoid),
        Op::Conv2d { x, w, b, padding } => {
            kernels::conv2d(get(*x), get(*w), b.map(|b| bias_slice(get(b))), *padding)?
        }
        Op::ConvTranspose2d { x, w, b } => kernels::conv_transpose2d(get(*x), get(*w), b.map(|b| bias_slice(get(b))))?,
        Op::PixelShuffle(x, s) => kernels::pixel_shuffle(get(*x), *s)?,
        Op::Sum(x) => Tensor::full(Shape::new(1, 1, 1, 1), get(*x).sum()),
        Op::MeanAbsError(x, target) => {
            let tx = get(*x);
            if tx.shape() != target.shape() {
                return Err(Error::Dimension {
                    op: "mean_abs_error",
                    lhs: tx.shape().dims(),
                    rhs: target.shape().dims(),
                });
            }
            let n = tx.len().max(1) as f64;
            let total: f64 = tx
                .data()
                .iter()
                .zip(target.data())
                .map(|(&p, &q)| (p.as_f64() - q).abs())
                .sum();
            Tensor::full(Shape::new(1, 1, 1, 1), T::from_f64(total / n))
        }
    })
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: &'static str, value: Tensor<T>, kind: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    /// Learnable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.apply(Op::Scale(a, k))
    }

    /// Channel-axis concatenation; part `i` occupies a contiguous channel slab.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        match parts {
            [] => Err(Error::Shape {
                op: "concat_channels",
                reason: "empty list".into(),
            }),
            [only] => Ok(*only),
            _ => self.apply(Op::Concat(parts.to_vec())),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sigmoid(x))
    }

    /// Stride-1 convolution; `w` is `(out, in, k, k)`, `b` has `out` entries
    /// stored as a `(out, 1, 1, 1)` tensor.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, padding: usize) -> Result<Var> {
        self.apply(Op::Conv2d { x, w, b, padding })
    }

    /// Stride-1, padding-0 transposed convolution; `w` is `(in, out, k, k)`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.apply(Op::ConvTranspose2d { x, w, b })
    }

    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        self.apply(Op::PixelShuffle(x, s))
    }

    /// Sum of all elements as a `1×1×1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sum(x))
    }

    /// Mean absolute error against a constant target, as a scalar node.
    pub fn mean_abs_error(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        self.apply(Op::MeanAbsError(x, target.cast()))
    }

    fn apply(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, |v| &self.nodes[v.0].value)?;
        let inputs = op.inputs();
        self.push(op.name(), value, op, &inputs)
    }

    /// Value of `root` with leaf `leaf` replaced by `value`. Only nodes
    /// downstream of `leaf` are recomputed; the rest reuse their taped
    /// values, so the result is bit-identical to rebuilding the graph.
    pub fn replay(&self, leaf: Var, value: &Tensor<T>, root: Var) -> Result<Tensor<T>> {
        if !matches!(self.nodes[leaf.0].op, Op::Leaf) {
            return Err(Error::Config(format!("node {} is not a leaf", leaf.0)));
        }
        same_shape("replay", self.value(leaf), value)?;
        if root.0 < leaf.0 {
            return Ok(self.value(root).clone());
        }
        let base = leaf.0;
        let mut fresh: Vec<Option<Tensor<T>>> = vec![None; root.0 - base + 1];
        fresh[0] = Some(value.clone());
        for id in base + 1..=root.0 {
            let op = &self.nodes[id].op;
            let dirty = op.inputs().iter().any(|v| v.0 >= base && fresh[v.0 - base].is_some());
            if !dirty {
                continue;
            }
            let current = |v: Var| match v.0.checked_sub(base).and_then(|i| fresh[i].as_ref()) {
                Some(t) => t,
                None => &self.nodes[v.0].value,
            };
            let out = eval(op, current)?;
            if !out.is_finite() {
                return Err(Error::NonFinite { op: op.name() });
            }
            fresh[id - base] = Some(out);
        }
        Ok(fresh[root.0 - base].take().unwrap_or_else(|| self.value(root).clone()))
    }

    /// Back-propagate from a scalar `root`, seeding its gradient with 1.
    pub fn backward(&self, root: Var) -> Result<Grads<T>> {
        if self.shape(root).numel() != 1 {
            return Err(Error::Shape {
                op: "backward",
                reason: format!("root must be scalar, got {}", self.shape(root)),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(Shape::new(1, 1, 1, 1), T::one()));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Grads { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        accumulate(&mut grads[v.0], g.clone());
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], zip_map(g, self.value(*b), |p, q| p * q));
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], zip_map(g, self.value(*a), |p, q| p * q));
                }
            }
            Op::Scale(a, k) => {
                let kt = T::from_f64(*k);
                accumulate(&mut grads[a.0], g.map(|v| v * kt));
            }
            Op::Concat(parts) => {
                let s = g.shape();
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    if self.wants(p) {
                        let mut data = Vec::with_capacity(ps.numel());
                        for n in 0..s.n {
                            let start = (n * s.c + offset) * s.plane();
                            data.extend_from_slice(&g.data()[start..start + ps.c * s.plane()]);
                        }
                        accumulate(&mut grads[p.0], Tensor::new(ps, data)?);
                    }
                    offset += ps.c;
                }
            }
            Op::Relu(x) => {
                let gx = zip_map(g, self.value(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() });
                accumulate(&mut grads[x.0], gx);
            }
            Op::Sigmoid(x) => {
                let gx = zip_map(g, &node.value, |gv, yv| gv * yv * (T::one() - yv));
                accumulate(&mut grads[x.0], gx);
            }
            Op::Conv2d { x, w, b, padding } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], kernels::conv2d_grad_input(g, tw, *padding, tx.shape()));
                }
                if self.wants(*w) {
                    accumulate(&mut grads[w.0], kernels::conv2d_grad_weight(g, tx, *padding, tw.shape().h));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let gb = Tensor::new(self.shape(b), kernels::channel_sums(g))?;
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::ConvTranspose2d { x, w, b } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], kernels::conv_transpose2d_grad_input(g, tw)?);
                }
                if self.wants(*w) {
                    accumulate(&mut grads[w.0], kernels::conv_transpose2d_grad_weight(g, tx, tw.shape().h));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let gb = Tensor::new(self.shape(b), kernels::channel_sums(g))?;
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::PixelShuffle(x, s) => {
                accumulate(&mut grads[x.0], kernels::pixel_unshuffle(g, *s)?);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                accumulate(&mut grads[x.0], Tensor::full(self.shape(*x), gv));
            }
            Op::MeanAbsError(x, target) => {
                let tx = self.value(*x);
                let scale = g.data()[0] / T::from_f64(tx.len().max(1) as f64);
                let data = tx
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &q)| {
                        let d = p.as_f64() - q;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                accumulate(&mut grads[x.0], Tensor::new(tx.shape(), data)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(c: usize, w: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::new(Shape::new(1, c, 1, w), vals.to_vec()).unwrap()
    }

    /// `x → conv → relu → concat with a constant → sigmoid → sum`.
    fn chain(g: &mut Graph<f64>, x: Tensor<f64>, w: Tensor<f64>) -> (Var, Var, Var) {
        let other = g.constant(Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, y, x| (c + y * x) as f64 * 0.1));
        let xv = g.param(x);
        let wv = g.param(w);
        let h = g.conv2d(xv, wv, None, 1).unwrap();
        let h = g.relu(h).unwrap();
        let h = g.concat_channels(&[h, other]).unwrap();
        let h = g.sigmoid(h).unwrap();
        (xv, wv, g.sum(h).unwrap())
    }

    #[test]
    fn replay_matches_a_rebuilt_graph() {
        let x = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, x| (y as f64 - x as f64) * 0.3);
        let w = Tensor::from_fn(Shape::new(2, 1, 3, 3), |o, _, y, x| ((o + 2 * y + x) as f64 * 0.7).sin());
        let mut g = Graph::new();
        let (xv, wv, root) = chain(&mut g, x.clone(), w.clone());
        let mut w2 = w.clone();
        w2.data_mut()[4] += 0.25;
        let mut x2 = x.clone();
        x2.data_mut()[0] -= 1.0;
        for (leaf, x_new, w_new, value) in [(wv, &x, &w2, &w2), (xv, &x2, &w, &x2)] {
            let mut fresh = Graph::new();
            let (_, _, r) = chain(&mut fresh, x_new.clone(), w_new.clone());
            let replayed = g.replay(leaf, value, root).unwrap();
            assert_eq!(replayed.data()[0].to_bits(), fresh.value(r).data()[0].to_bits());
        }
        assert!(g.replay(root, g.value(root), root).is_err());
    }

    #[test]
    fn add_and_mul_values() {
        let mut g = Graph::new();
        let a = g.constant(t(1, 2, &[1.0, 2.0]));
        let b = g.constant(t(1, 2, &[3.0, 4.0]));
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[4.0, 6.0]);
        let a = g.constant(t(1, 2, &[2.0, 3.0]));
        let b = g.constant(t(1, 2, &[0.5, 0.5]));
        let p = g.mul(a, b).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 1.5]);
    }

    #[test]
    fn add_shape_mismatch_names_both() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(1, 2, &[1.0, 2.0]));
        let b = g.constant(t(1, 3, &[1.0, 2.0, 3.0]));
        let err = g.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 1, 1, 2]") && msg.contains("[1, 1, 1, 3]"), "{msg}");
    }

    #[test]
    fn relu_values_and_dead_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(1, 3, &[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(t(1, 3, &[-1.0, -2.0, -0.5]));
        let y = g.relu(x).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_single_part_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(g.concat_channels(&[x]).unwrap(), x);
        assert!(g.concat_channels(&[]).is_err());
        let y = g.constant(t(1, 3, &[1.0, 2.0, 3.0]));
        assert!(g.concat_channels(&[x, y]).is_err());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(1, 2, &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(1, 1, &[1e308]));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(1, 2, &[1.0, 2.0]));
        let b = g.param(t(1, 2, &[3.0, 4.0]));
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 2.0]);
    }
}
