//! Define-by-run reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse, summing
//! contributions whenever a node feeds more than one consumer. Leaves
//! registered with [`Tape::param`] receive an entry in the returned
//! [`GradientMap`]; leaves registered with [`Tape::constant`] never do.
//!
//! [`Primitive::GradReverse`] is the identity on the forward pass and scales
//! the incoming gradient by `-lambda` on the way back. It lets a single
//! backward pass hand opposite-sign updates to the parameters on either side
//! of it.

mod check;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

pub use check::{finite_diff_gradient, relative_error};

use crate::error::{Error, Result};
use crate::tensor::{matmul_a_bt_acc, matmul_at_b_acc, matmul_into, Tensor};

/// Lower clamp applied to the argument of [`Primitive::Log`].
pub const LOG_FLOOR: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// `[m,k] · [k,n]`
    MatMul,
    /// Elementwise sum. The right operand may also be a 1-D row broadcast
    /// over the leading axes of the left operand.
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    Scale(f64),
    Relu,
    Tanh,
    Sigmoid,
    /// Softmax over the last axis.
    Softmax,
    /// Natural log with the argument clamped at [`LOG_FLOOR`].
    Log,
    Exp,
    Sum,
    Mean,
    Abs,
    Square,
    /// Concatenation along the last axis.
    Concat,
    /// Identity forward, `-lambda · g` backward.
    GradReverse(f64),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "subtract",
            Primitive::Mul => "multiply",
            Primitive::Scale(_) => "scale",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Softmax => "softmax",
            Primitive::Log => "log",
            Primitive::Exp => "exp",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Abs => "abs",
            Primitive::Square => "square",
            Primitive::Concat => "concat",
            Primitive::GradReverse(_) => "grad_reverse",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul => Some(2),
            Primitive::Concat => None,
            _ => Some(1),
        }
    }
}

/// Handle to a node on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Apply { prim: Primitive, inputs: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    param: Option<String>,
}

/// Append-only computation record. Inputs always precede the nodes that
/// consume them, so index order is a topological order.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false, None)
    }

    /// A named trainable leaf. Its gradient appears in [`GradientMap`] under
    /// `name`, as a zero tensor if the loss does not depend on it.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true, Some(name.into()))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.check(v)?;
        Ok(&self.nodes[v.index].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        self.check(v)?;
        Ok(self.nodes[v.index].requires_grad)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::StaleHandle);
        }
        Ok(())
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, param: Option<String>) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            param,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Evaluates `prim` on `inputs` and records the result.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        match prim.arity() {
            Some(n) if n != inputs.len() => {
                return Err(Error::invalid(format!(
                    "{} takes {n} inputs, got {}",
                    prim.name(),
                    inputs.len()
                )))
            }
            None if inputs.is_empty() => {
                return Err(Error::invalid(format!("{} needs at least one input", prim.name())))
            }
            _ => {}
        }
        let idx: Vec<usize> = inputs.iter().map(|v| v.index).collect();
        let value = self.forward(prim, &idx)?;
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(Op::Apply { prim, inputs: idx }, value, requires_grad, None))
    }

    fn forward(&self, prim: Primitive, idx: &[usize]) -> Result<Tensor> {
        let x = &self.nodes[idx[0]].value;
        let unary = |f: &dyn Fn(f64) -> f64| x.map(f);
        Ok(match prim {
            Primitive::MatMul => {
                let y = &self.nodes[idx[1]].value;
                let (xs, ys) = (x.shape(), y.shape());
                if xs.len() != 2 || ys.len() != 2 || xs[1] != ys[0] {
                    return Err(mismatch(prim, x, y));
                }
                let (m, k, n) = (xs[0], xs[1], ys[1]);
                let mut out = vec![0.0; m * n];
                matmul_into(x.data(), y.data(), &mut out, m, k, n);
                Tensor::new(vec![m, n], out)?
            }
            Primitive::Add | Primitive::Sub | Primitive::Mul => {
                let y = &self.nodes[idx[1]].value;
                let f: fn(f64, f64) -> f64 = match prim {
                    Primitive::Add => |a, b| a + b,
                    Primitive::Sub => |a, b| a - b,
                    _ => |a, b| a * b,
                };
                if x.shape() == y.shape() {
                    let data = x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
                    Tensor::new(x.shape().to_vec(), data)?
                } else if prim == Primitive::Add && is_row_broadcast(x, y) {
                    let c = y.len();
                    let data = x.data().iter().enumerate().map(|(i, &a)| a + y.data()[i % c]).collect();
                    Tensor::new(x.shape().to_vec(), data)?
                } else {
                    return Err(mismatch(prim, x, y));
                }
            }
            Primitive::Scale(c) => unary(&|v| c * v),
            Primitive::Relu => unary(&|v| if v > 0.0 { v } else { 0.0 }),
            Primitive::Tanh => unary(&f64::tanh),
            Primitive::Sigmoid => unary(&sigmoid),
            Primitive::Softmax => softmax_rows(x),
            Primitive::Log => unary(&|v| v.max(LOG_FLOOR).ln()),
            Primitive::Exp => unary(&f64::exp),
            Primitive::Abs => unary(&f64::abs),
            Primitive::Square => unary(&|v| v * v),
            Primitive::Sum => Tensor::scalar(x.data().iter().sum()),
            Primitive::Mean => {
                if x.is_empty() {
                    return Err(Error::Shape("mean of an empty tensor".into()));
                }
                Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
            }
            Primitive::Concat => {
                let parts: Vec<&Tensor> = idx.iter().map(|&i| &self.nodes[i].value).collect();
                concat_last(prim, &parts)?
            }
            Primitive::GradReverse(lambda) => {
                if !(lambda >= 0.0) {
                    return Err(Error::invalid(format!(
                        "grad_reverse lambda must be non-negative, got {lambda}"
                    )));
                }
                x.clone()
            }
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Abs, &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Square, &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::Concat, parts)
    }

    pub fn grad_reverse(&mut self, a: Var, lambda: f64) -> Result<Var> {
        self.apply(Primitive::GradReverse(lambda), &[a])
    }

    /// Reverse sweep from `loss`. Every node is visited once, in reverse
    /// record order.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        self.check(loss)?;
        let root = &self.nodes[loss.index];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(vec![1.0]);
        let mut out = GradientMap::default();

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    if let Some(name) = &node.param {
                        out.accumulate(name, &node.value, &g);
                    }
                }
                Op::Apply { prim, inputs } => self.vjp(*prim, i, inputs, &g, &mut grads)?,
            }
        }

        // Parameters the loss never touched still get an entry.
        for node in &self.nodes {
            if let Some(name) = &node.param {
                out.0
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }

    fn vjp(
        &self,
        prim: Primitive,
        at: usize,
        inputs: &[usize],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let y = &self.nodes[at].value;
        let x = &self.nodes[inputs[0]].value;
        let wants = |k: usize| self.nodes[inputs[k]].requires_grad;

        match prim {
            Primitive::MatMul => {
                let b = &self.nodes[inputs[1]].value;
                let (m, k, n) = (x.shape()[0], x.shape()[1], b.shape()[1]);
                if wants(0) {
                    let slot = slot(grads, inputs[0], x.len());
                    matmul_a_bt_acc(g, b.data(), slot, m, k, n);
                }
                if wants(1) {
                    let slot = slot(grads, inputs[1], b.len());
                    matmul_at_b_acc(x.data(), g, slot, m, k, n);
                }
            }
            Primitive::Add | Primitive::Sub => {
                let b = &self.nodes[inputs[1]].value;
                if wants(0) {
                    add_into(slot(grads, inputs[0], x.len()), g, 1.0);
                }
                if wants(1) {
                    let sign = if prim == Primitive::Sub { -1.0 } else { 1.0 };
                    let s = slot(grads, inputs[1], b.len());
                    if b.shape() == x.shape() {
                        add_into(s, g, sign);
                    } else {
                        let c = b.len();
                        for (j, gv) in g.iter().enumerate() {
                            s[j % c] += sign * gv;
                        }
                    }
                }
            }
            Primitive::Mul => {
                let b = &self.nodes[inputs[1]].value;
                if wants(0) {
                    let s = slot(grads, inputs[0], x.len());
                    for ((o, gv), bv) in s.iter_mut().zip(g).zip(b.data()) {
                        *o += gv * bv;
                    }
                }
                if wants(1) {
                    let s = slot(grads, inputs[1], b.len());
                    for ((o, gv), av) in s.iter_mut().zip(g).zip(x.data()) {
                        *o += gv * av;
                    }
                }
            }
            Primitive::Concat => {
                let mut offset = 0;
                let total = y.cols();
                for &input in inputs {
                    let part = &self.nodes[input].value;
                    let c = part.cols();
                    if self.nodes[input].requires_grad {
                        let s = slot(grads, input, part.len());
                        for r in 0..part.rows() {
                            for j in 0..c {
                                s[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Primitive::Softmax => {
                let c = y.cols();
                let s = slot(grads, inputs[0], x.len());
                for r in 0..y.rows() {
                    let yr = &y.data()[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        s[r * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Primitive::Sum | Primitive::Mean => {
                let scale = if prim == Primitive::Mean {
                    g[0] / x.len() as f64
                } else {
                    g[0]
                };
                for o in slot(grads, inputs[0], x.len()) {
                    *o += scale;
                }
            }
            _ => {
                // Elementwise unary primitives: local derivative from x and y.
                let local: Box<dyn Fn(f64, f64) -> f64> = match prim {
                    Primitive::Scale(c) => Box::new(move |_, _| c),
                    Primitive::GradReverse(lambda) => Box::new(move |_, _| -lambda),
                    Primitive::Relu => Box::new(|xv, _| if xv > 0.0 { 1.0 } else { 0.0 }),
                    Primitive::Tanh => Box::new(|_, yv| 1.0 - yv * yv),
                    Primitive::Sigmoid => Box::new(|_, yv| yv * (1.0 - yv)),
                    Primitive::Log => Box::new(|xv, _| if xv > LOG_FLOOR { 1.0 / xv } else { 0.0 }),
                    Primitive::Exp => Box::new(|_, yv| yv),
                    Primitive::Abs => Box::new(|xv, _| {
                        if xv > 0.0 {
                            1.0
                        } else if xv < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }),
                    Primitive::Square => Box::new(|xv, _| 2.0 * xv),
                    _ => unreachable!("handled above"),
                };
                let s = slot(grads, inputs[0], x.len());
                for (((o, gv), &xv), &yv) in s.iter_mut().zip(g).zip(x.data()).zip(y.data()) {
                    *o += gv * local(xv, yv);
                }
            }
        }
        Ok(())
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut [f64] {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], sign: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += sign * s;
    }
}

fn mismatch(prim: Primitive, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        primitive: prim.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn is_row_broadcast(x: &Tensor, b: &Tensor) -> bool {
    b.shape().len() == 1 && x.shape().len() >= 2 && b.len() == x.cols()
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn concat_last(prim: Primitive, parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts[0];
    let lead = &first.shape()[..first.shape().len().saturating_sub(1)];
    let rows = first.rows();
    for p in &parts[1..] {
        let plead = &p.shape()[..p.shape().len().saturating_sub(1)];
        if plead != lead || p.rows() != rows {
            return Err(mismatch(prim, first, p));
        }
    }
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, data)
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap(BTreeMap<String, Tensor>);

impl GradientMap {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.0.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales every gradient so the global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for t in self.0.values_mut() {
                for v in t.data_mut() {
                    *v *= s;
                }
            }
        }
    }

    fn accumulate(&mut self, name: &str, like: &Tensor, g: &[f64]) {
        let entry = self
            .0
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(like.shape()));
        for (e, v) in entry.data_mut().iter_mut().zip(g) {
            *e += v;
        }
    }
}
