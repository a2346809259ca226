//! Define-by-run computation graph with reverse-mode gradients.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep.

use std::collections::HashMap;

use super::{AutodiffError, GradientSet, ParamId, ParamStore, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations recorded in the graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    /// `[m, n] x [n] -> [m]`
    MatVec,
    Add,
    Sub,
    Mul,
    Div,
    /// Joins rank-1 inputs end to end.
    Concat,
    /// Contiguous sub-range of a rank-1 input.
    Slice { start: usize, len: usize },
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    /// Multiplication by a fixed constant.
    Scale(f64),
    /// Addition of a fixed constant.
    Shift(f64),
    /// Sum of all entries to a single-element tensor.
    Sum,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatVec => "matvec",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Scale(_) => "scale",
            OpKind::Shift(_) => "shift",
            OpKind::Sum => "sum",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::MatVec | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => Some(2),
            OpKind::Concat => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug)]
enum Source {
    Constant,
    Param,
    Op(OpKind, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    source: Source,
    value: Tensor,
}

/// Deliberately wrong local derivative for one op kind. Only used to prove
/// that the gradient checker catches a broken backward rule.
#[derive(Clone, Copy, Debug)]
pub struct DerivativeFault {
    pub op: &'static str,
    pub factor: f64,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    fault: Option<DerivativeFault>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Option<DerivativeFault>) -> Self {
        Graph {
            fault,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, source: Source, value: Tensor) -> Var {
        self.nodes.push(Node { source, value });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient bookkeeping beyond its node slot.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Source::Constant, value)
    }

    pub fn constant_vec(&mut self, values: &[f64]) -> Var {
        self.constant(Tensor::vector(values))
    }

    /// Leaf bound to a stored parameter. Repeated calls with the same id
    /// return the same node, so every use accumulates into one gradient.
    pub fn param(&mut self, id: ParamId, store: &ParamStore) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(Source::Param, store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Evaluates `kind` on `inputs` and records the result.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(AutodiffError::Arity {
                    op: kind.name(),
                    expected: n,
                    got: inputs.len(),
                });
            }
        } else if inputs.is_empty() {
            return Err(AutodiffError::Arity {
                op: kind.name(),
                expected: 1,
                got: 0,
            });
        }
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            evaluate(kind, &vals)?
        };
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: kind.name() });
        }
        Ok(self.push(
            Source::Op(kind, inputs.iter().map(|v| v.0).collect()),
            value,
        ))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::MatVec, &[w, x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Div, &[a, b])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Concat, parts)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Slice { start, len }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Tanh, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Exp, &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Log, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Scale(factor), &[x])
    }

    pub fn shift(&mut self, x: Var, offset: f64) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Shift(offset), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Sum, &[x])
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Source::Op(kind, inputs) = &self.nodes[i].source {
                self.propagate(*kind, inputs, &self.nodes[i].value, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { nodes: grads })
    }

    fn propagate(
        &self,
        kind: OpKind,
        inputs: &[usize],
        out: &Tensor,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let fault = match self.fault {
            Some(f) if f.op == kind.name() => f.factor,
            _ => 1.0,
        };
        let val = |k: usize| self.nodes[inputs[k]].value.data();
        let y = out.data();
        match kind {
            OpKind::MatVec => {
                let w = &self.nodes[inputs[0]].value;
                let (m, n) = (w.shape()[0], w.shape()[1]);
                let x = val(1);
                {
                    let gw = slot(grads, inputs[0], m * n);
                    for i in 0..m {
                        let gi = g[i] * fault;
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &mut gw[i * n..(i + 1) * n];
                        for (r, xj) in row.iter_mut().zip(x) {
                            *r += gi * xj;
                        }
                    }
                }
                let wd = w.data();
                let gx = slot(grads, inputs[1], n);
                for i in 0..m {
                    let gi = g[i] * fault;
                    if gi == 0.0 {
                        continue;
                    }
                    let row = &wd[i * n..(i + 1) * n];
                    for (r, wij) in gx.iter_mut().zip(row) {
                        *r += gi * wij;
                    }
                }
            }
            OpKind::Add | OpKind::Sub => {
                let sign = if kind == OpKind::Sub { -1.0 } else { 1.0 };
                for (k, s) in [(0, 1.0), (1, sign)] {
                    let ga = slot(grads, inputs[k], g.len());
                    for (a, gi) in ga.iter_mut().zip(g) {
                        *a += s * gi * fault;
                    }
                }
            }
            OpKind::Mul => {
                let (a, b) = (val(0), val(1));
                accumulate(grads, inputs[0], g.iter().zip(b).map(|(gi, bi)| gi * bi * fault));
                accumulate(grads, inputs[1], g.iter().zip(a).map(|(gi, ai)| gi * ai * fault));
            }
            OpKind::Div => {
                let (a, b) = (val(0), val(1));
                accumulate(grads, inputs[0], g.iter().zip(b).map(|(gi, bi)| gi / bi * fault));
                accumulate(
                    grads,
                    inputs[1],
                    g.iter()
                        .zip(a.iter().zip(b))
                        .map(|(gi, (ai, bi))| -gi * ai / (bi * bi) * fault),
                );
            }
            OpKind::Concat => {
                let mut offset = 0;
                for &inp in inputs {
                    let n = self.nodes[inp].value.len();
                    accumulate(grads, inp, g[offset..offset + n].iter().map(|gi| gi * fault));
                    offset += n;
                }
            }
            OpKind::Slice { start, len } => {
                let n = self.nodes[inputs[0]].value.len();
                let gx = slot(grads, inputs[0], n);
                for (dst, gi) in gx[start..start + len].iter_mut().zip(g) {
                    *dst += gi * fault;
                }
            }
            OpKind::Sigmoid => {
                accumulate(grads, inputs[0], g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi) * fault));
            }
            OpKind::Tanh => {
                accumulate(grads, inputs[0], g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi) * fault));
            }
            OpKind::Relu => {
                let x = val(0);
                accumulate(
                    grads,
                    inputs[0],
                    g.iter().zip(x).map(|(gi, xi)| if *xi > 0.0 { gi * fault } else { 0.0 }),
                );
            }
            OpKind::Exp => {
                accumulate(grads, inputs[0], g.iter().zip(y).map(|(gi, yi)| gi * yi * fault));
            }
            OpKind::Log => {
                let x = val(0);
                accumulate(grads, inputs[0], g.iter().zip(x).map(|(gi, xi)| gi / xi * fault));
            }
            OpKind::Scale(c) => {
                accumulate(grads, inputs[0], g.iter().map(|gi| gi * c * fault));
            }
            OpKind::Shift(_) => {
                accumulate(grads, inputs[0], g.iter().map(|gi| gi * fault));
            }
            OpKind::Sum => {
                let n = self.nodes[inputs[0]].value.len();
                let g0 = g[0] * fault;
                accumulate(grads, inputs[0], std::iter::repeat_n(g0, n));
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, contrib: impl ExactSizeIterator<Item = f64>) {
    let buf = slot(grads, idx, contrib.len());
    for (b, c) in buf.iter_mut().zip(contrib) {
        *b += c;
    }
}

fn same_shape(op: OpKind, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: op.name(),
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn map_unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

fn zip_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn evaluate(kind: OpKind, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
    let out = match kind {
        OpKind::MatVec => {
            let (w, x) = (inputs[0], inputs[1]);
            if w.rank() != 2 || x.rank() != 1 || w.shape()[1] != x.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: kind.name(),
                    left: w.shape().to_vec(),
                    right: x.shape().to_vec(),
                });
            }
            let (m, n) = (w.shape()[0], w.shape()[1]);
            let (wd, xd) = (w.data(), x.data());
            let data = (0..m)
                .map(|i| wd[i * n..(i + 1) * n].iter().zip(xd).map(|(a, b)| a * b).sum())
                .collect();
            Tensor::new(vec![m], data)?
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
            let (a, b) = (inputs[0], inputs[1]);
            same_shape(kind, a, b)?;
            match kind {
                OpKind::Add => zip_binary(a, b, |x, y| x + y),
                OpKind::Sub => zip_binary(a, b, |x, y| x - y),
                OpKind::Mul => zip_binary(a, b, |x, y| x * y),
                _ => zip_binary(a, b, |x, y| x / y),
            }
        }
        OpKind::Concat => {
            if let Some(bad) = inputs.iter().find(|t| t.rank() != 1) {
                return Err(AutodiffError::ShapeMismatch {
                    op: kind.name(),
                    left: bad.shape().to_vec(),
                    right: vec![bad.len()],
                });
            }
            let data: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::new(vec![data.len()], data)?
        }
        OpKind::Slice { start, len } => {
            let x = inputs[0];
            if x.rank() != 1 || len == 0 || start + len > x.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: kind.name(),
                    left: x.shape().to_vec(),
                    right: vec![start, len],
                });
            }
            Tensor::new(vec![len], x.data()[start..start + len].to_vec())?
        }
        OpKind::Sigmoid => map_unary(inputs[0], sigmoid),
        OpKind::Tanh => map_unary(inputs[0], f64::tanh),
        OpKind::Relu => map_unary(inputs[0], |v| if v > 0.0 { v } else { 0.0 }),
        OpKind::Exp => map_unary(inputs[0], f64::exp),
        OpKind::Log => map_unary(inputs[0], f64::ln),
        OpKind::Scale(c) => map_unary(inputs[0], |v| v * c),
        OpKind::Shift(c) => map_unary(inputs[0], |v| v + c),
        OpKind::Sum => Tensor::scalar(inputs[0].data().iter().sum()),
    };
    Ok(out)
}

/// Result of a backward sweep: one optional accumulator per graph node.
/// A node the loss does not depend on has no accumulator (zero gradient).
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `v`, zero-filled when `v` did not reach the loss.
    pub fn wrt_dense(&self, graph: &Graph, v: Var) -> Vec<f64> {
        self.wrt(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; graph.value(v).len()])
    }

    /// Collects parameter gradients, aligned with `store`.
    pub fn param_grads(&self, graph: &Graph, store: &ParamStore) -> GradientSet {
        let mut set = GradientSet::empty(store.len());
        for (&id, &var) in &graph.params {
            if let Some(g) = self.wrt(var) {
                let shape = store.get(id).shape().to_vec();
                set.set(id, Tensor::new(shape, g.to_vec()).expect("gradient matches parameter"));
            }
        }
        set
    }
}
