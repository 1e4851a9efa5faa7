use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use super::ops::{self, Op};
use super::{AutodiffError, Tensor};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: usize,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
}

/// Append-only expression graph with eagerly computed values.
///
/// Every backward rule is itself recorded with the primitives below, so the
/// gradients returned by [`Tape::grad`] can be differentiated again.
#[derive(Debug)]
pub struct Tape {
    id: usize,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Forward values for every node of a replayed tape.
#[derive(Clone, Debug)]
pub struct Evaluation {
    tape: usize,
    values: Vec<Tensor>,
}

impl Evaluation {
    pub fn value(&self, var: Var) -> Result<&Tensor, AutodiffError> {
        if var.tape != self.tape {
            return Err(AutodiffError::ForeignVar);
        }
        self.values.get(var.index).ok_or(AutodiffError::ForeignVar)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn var(&self, index: usize) -> Var {
        Var { tape: self.id, index }
    }

    fn check(&self, var: Var) -> Result<usize, AutodiffError> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(var.index)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor, AutodiffError> {
        let i = self.check(var)?;
        Ok(&self.nodes[i].value)
    }

    pub fn shape(&self, var: Var) -> Result<&[usize], AutodiffError> {
        Ok(self.value(var)?.shape())
    }

    /// Named free input. Replays through [`Tape::evaluate`] rebind it by name.
    pub fn input(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.push_leaf(Op::Input(name.into()), value)
    }

    /// Value with no dependence on anything; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(Op::Constant, value)
    }

    pub fn is_input(&self, var: Var) -> bool {
        self.check(var).map(|i| matches!(self.nodes[i].op, Op::Input(_))).unwrap_or(false)
    }

    fn push_leaf(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, inputs: Vec::new(), value });
        self.var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, args: &[Var]) -> Result<Var, AutodiffError> {
        let mut inputs = Vec::with_capacity(args.len());
        for &a in args {
            inputs.push(self.check(a)?);
        }
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i].value).collect();
            ops::apply(&op, &vals).map_err(|detail| AutodiffError::Shape {
                node: self.nodes.len(),
                op: op.name(),
                detail,
            })?
        };
        self.nodes.push(Node { op, inputs, value });
        Ok(self.var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Mul, &[a, b])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Neg, &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        self.record(Op::Scale(factor), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes a rank-2 operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var, AutodiffError> {
        self.record(Op::MatMul { trans_a, trans_b }, &[a, b])
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Mean, &[a])
    }

    /// Reduces by summation onto `shape`, the inverse of [`Tape::broadcast`].
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.record(Op::SumTo(shape.to_vec()), &[a])
    }

    /// Right-aligned broadcast; every source axis must be 1 or match.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.record(Op::Broadcast(shape.to_vec()), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Log, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Tanh, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Softplus, &[a])
    }

    pub fn mish(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Mish, &[a])
    }

    pub fn logcosh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::LogCosh, &[a])
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Sin, &[a])
    }

    pub fn cos(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Cos, &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        self.record(Op::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        self.record(Op::Slice { axis, start, len }, &[a])
    }

    /// `x + broadcast(bias)`.
    pub fn add_broadcast(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let shape = self.shape(x)?.to_vec();
        let b = self.broadcast(bias, &shape)?;
        self.add(x, b)
    }

    /// Replays every node with the given input bindings.
    ///
    /// Inputs missing from `bindings` are an error; constants keep their
    /// recorded values. Gradient nodes appended by [`Tape::grad`] are replayed
    /// too, so perturbing an input re-evaluates its recorded derivatives.
    pub fn evaluate(&self, bindings: &BTreeMap<String, Tensor>) -> Result<Evaluation, AutodiffError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (index, node) in self.nodes.iter().enumerate() {
            let value = match &node.op {
                Op::Input(name) => bindings
                    .get(name)
                    .cloned()
                    .ok_or_else(|| AutodiffError::UnboundInput(name.clone()))?,
                Op::Constant => node.value.clone(),
                op => {
                    let args: Vec<&Tensor> = node.inputs.iter().map(|&i| &values[i]).collect();
                    ops::apply(op, &args).map_err(|detail| AutodiffError::Shape {
                        node: index,
                        op: op.name(),
                        detail,
                    })?
                }
            };
            values.push(value);
        }
        Ok(Evaluation { tape: self.id, values })
    }

    /// Bindings that reproduce the recorded values of every named input.
    pub fn current_bindings(&self) -> BTreeMap<String, Tensor> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Input(name) => Some((name.clone(), n.value.clone())),
                _ => None,
            })
            .collect()
    }

    pub(crate) fn input_name(&self, var: Var) -> Option<&str> {
        match &self.nodes.get(var.index)?.op {
            Op::Input(name) if var.tape == self.id => Some(name),
            _ => None,
        }
    }

    /// Gradients of a scalar `output` with respect to each of `wrt`, recorded
    /// on the tape so they can be differentiated again.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        let out = self.check(output)?;
        let out_value = &self.nodes[out].value;
        if out_value.len() != 1 {
            return Err(AutodiffError::NonScalarOutput { shape: out_value.shape().to_vec() });
        }
        let targets = wrt.iter().map(|&w| self.check(w)).collect::<Result<Vec<_>, _>>()?;

        // Nodes that depend on at least one requested variable.
        let mut relevant = vec![false; out + 1];
        for &t in &targets {
            if t <= out {
                relevant[t] = true;
            }
        }
        for i in 0..=out {
            if !relevant[i] && self.nodes[i].inputs.iter().any(|&j| relevant[j]) {
                relevant[i] = true;
            }
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; out + 1];
        if relevant[out] {
            let seed = Tensor::full(out_value.shape(), 1.0);
            adjoint[out] = Some(self.constant(seed));
        }
        for i in (0..=out).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !relevant[i] || self.nodes[i].op.is_leaf() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let inputs = self.nodes[i].inputs.clone();
            let contributions = self.backward_rule(&op, &inputs, i, g, &relevant)?;
            for (j, contribution) in inputs.into_iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                adjoint[j] = Some(match adjoint[j] {
                    Some(prev) => self.add(prev, c)?,
                    None => c,
                });
            }
        }

        let mut result = Vec::with_capacity(targets.len());
        for &t in &targets {
            let g = match adjoint.get(t).copied().flatten() {
                Some(g) => g,
                None => {
                    let zeros = Tensor::zeros(self.nodes[t].value.shape());
                    self.constant(zeros)
                }
            };
            result.push(g);
        }
        Ok(result)
    }

    /// Gradients of `output`. With `create_graph` the result is recorded and
    /// differentiable; without it, the intermediate backward nodes are
    /// discarded and the results are detached constants.
    pub fn gradient(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>, AutodiffError> {
        if create_graph {
            return self.grad(output, wrt);
        }
        let mark = self.nodes.len();
        let grads = self.grad(output, wrt)?;
        let values: Vec<Tensor> = grads.iter().map(|&g| self.nodes[g.index].value.clone()).collect();
        self.nodes.truncate(mark);
        Ok(values.into_iter().map(|v| self.constant(v)).collect())
    }

    /// Gradient values without leaving anything on the tape.
    pub fn gradient_values(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>, AutodiffError> {
        let mark = self.nodes.len();
        let grads = self.grad(output, wrt)?;
        let values = grads.iter().map(|&g| self.nodes[g.index].value.clone()).collect();
        self.nodes.truncate(mark);
        Ok(values)
    }

    /// Input adjoints of node `node` given its output adjoint `g`, expressed in
    /// recorded primitives. `None` marks inputs that need no gradient.
    fn backward_rule(
        &mut self,
        op: &Op,
        inputs: &[usize],
        node: usize,
        g: Var,
        relevant: &[bool],
    ) -> Result<Vec<Option<Var>>, AutodiffError> {
        let x: Vec<Var> = inputs.iter().map(|&i| self.var(i)).collect();
        let y = self.var(node);
        let need = |k: usize| relevant[inputs[k]];
        let mut out: Vec<Option<Var>> = vec![None; inputs.len()];
        match op {
            Op::Input(_) | Op::Constant => {}
            Op::Add => {
                out[0] = need(0).then_some(g);
                out[1] = need(1).then_some(g);
            }
            Op::Sub => {
                out[0] = need(0).then_some(g);
                if need(1) {
                    out[1] = Some(self.neg(g)?);
                }
            }
            Op::Mul => {
                if need(0) {
                    out[0] = Some(self.mul(g, x[1])?);
                }
                if need(1) {
                    out[1] = Some(self.mul(g, x[0])?);
                }
            }
            Op::Neg => out[0] = Some(self.neg(g)?),
            Op::Scale(c) => out[0] = Some(self.scale(g, *c)?),
            Op::MatMul { trans_a, trans_b } => {
                let (ta, tb) = (*trans_a, *trans_b);
                if need(0) {
                    out[0] = Some(if ta {
                        self.matmul_t(x[1], g, tb, true)?
                    } else {
                        self.matmul_t(g, x[1], false, !tb)?
                    });
                }
                if need(1) {
                    out[1] = Some(if tb {
                        self.matmul_t(g, x[0], true, ta)?
                    } else {
                        self.matmul_t(x[0], g, !ta, false)?
                    });
                }
            }
            Op::Sum => {
                let shape = self.nodes[inputs[0]].value.shape().to_vec();
                out[0] = Some(self.broadcast(g, &shape)?);
            }
            Op::Mean => {
                let shape = self.nodes[inputs[0]].value.shape().to_vec();
                let n = self.nodes[inputs[0]].value.len() as f64;
                let b = self.broadcast(g, &shape)?;
                out[0] = Some(self.scale(b, 1.0 / n)?);
            }
            Op::SumTo(_) => {
                let shape = self.nodes[inputs[0]].value.shape().to_vec();
                out[0] = Some(self.broadcast(g, &shape)?);
            }
            Op::Broadcast(_) => {
                let shape = self.nodes[inputs[0]].value.shape().to_vec();
                out[0] = Some(self.sum_to(g, &shape)?);
            }
            Op::Exp => out[0] = Some(self.mul(g, y)?),
            Op::Log => {
                // 1/x = exp(-log x)
                let ny = self.neg(y)?;
                let inv = self.exp(ny)?;
                out[0] = Some(self.mul(g, inv)?);
            }
            Op::Tanh => {
                // g (1 - y²) = g - g·y·y
                let yy = self.mul(y, y)?;
                let gyy = self.mul(g, yy)?;
                out[0] = Some(self.sub(g, gyy)?);
            }
            Op::Softplus => {
                // sigmoid(x) = exp(x - softplus(x))
                let d = self.sub(x[0], y)?;
                let s = self.exp(d)?;
                out[0] = Some(self.mul(g, s)?);
            }
            Op::Mish => {
                // mish'(x) = t + x·s·(1 - t²), t = tanh(softplus x), s = sigmoid x
                let sp = self.softplus(x[0])?;
                let t = self.tanh(sp)?;
                let d = self.sub(x[0], sp)?;
                let s = self.exp(d)?;
                let xs = self.mul(x[0], s)?;
                let tt = self.mul(t, t)?;
                let xstt = self.mul(xs, tt)?;
                let a = self.add(t, xs)?;
                let deriv = self.sub(a, xstt)?;
                out[0] = Some(self.mul(g, deriv)?);
            }
            Op::LogCosh => {
                let t = self.tanh(x[0])?;
                out[0] = Some(self.mul(g, t)?);
            }
            Op::Sin => {
                let c = self.cos(x[0])?;
                out[0] = Some(self.mul(g, c)?);
            }
            Op::Cos => {
                let s = self.sin(x[0])?;
                let gs = self.mul(g, s)?;
                out[0] = Some(self.neg(gs)?);
            }
            Op::Concat { axis } => {
                let mut start = 0;
                for (k, &i) in inputs.iter().enumerate() {
                    let len = self.nodes[i].value.shape()[*axis];
                    if need(k) {
                        out[k] = Some(self.slice(g, *axis, start, len)?);
                    }
                    start += len;
                }
            }
            Op::Slice { axis, start, len } => {
                let full = self.nodes[inputs[0]].value.shape().to_vec();
                let mut parts = Vec::with_capacity(3);
                if *start > 0 {
                    let mut s = full.clone();
                    s[*axis] = *start;
                    parts.push(self.constant(Tensor::zeros(&s)));
                }
                parts.push(g);
                let after = full[*axis] - start - len;
                if after > 0 {
                    let mut s = full.clone();
                    s[*axis] = after;
                    parts.push(self.constant(Tensor::zeros(&s)));
                }
                out[0] = Some(if parts.len() == 1 { g } else { self.concat(&parts, *axis)? });
            }
        }
        Ok(out)
    }
}

impl core::fmt::Display for Var {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "node {}", self.index)
    }
}

