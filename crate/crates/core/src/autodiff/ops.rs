//! Primitive operations and their forward kernels.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::math;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Op {
    Input(String),
    Constant,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    MatMul { trans_a: bool, trans_b: bool },
    Sum,
    Mean,
    SumTo(Vec<usize>),
    Broadcast(Vec<usize>),
    Exp,
    Log,
    Tanh,
    Softplus,
    Mish,
    LogCosh,
    Sin,
    Cos,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::MatMul { .. } => "matmul",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumTo(_) => "sum_to",
            Op::Broadcast(_) => "broadcast",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Tanh => "tanh",
            Op::Softplus => "softplus",
            Op::Mish => "mish",
            Op::LogCosh => "logcosh",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
        }
    }

    pub(crate) fn is_leaf(&self) -> bool {
        matches!(self, Op::Input(_) | Op::Constant)
    }
}

/// Evaluates a non-leaf op. Errors carry a description; the caller adds the node index.
pub(crate) fn apply(op: &Op, inputs: &[&Tensor]) -> Result<Tensor, String> {
    let arity = match op {
        Op::Input(_) | Op::Constant => return Err(String::from("leaf nodes have no kernel")),
        Op::Add | Op::Sub | Op::Mul | Op::MatMul { .. } => 2,
        Op::Concat { .. } => {
            if inputs.is_empty() {
                return Err(String::from("concat of zero tensors"));
            }
            inputs.len()
        }
        _ => 1,
    };
    if inputs.len() != arity {
        return Err(format!("expected {arity} inputs, got {}", inputs.len()));
    }
    let x = inputs[0];
    match op {
        Op::Add | Op::Sub | Op::Mul => {
            let y = inputs[1];
            if x.shape() != y.shape() {
                return Err(format!("operand shapes {:?} and {:?} differ", x.shape(), y.shape()));
            }
            Ok(match op {
                Op::Add => x.zip(y, |a, b| a + b),
                Op::Sub => x.zip(y, |a, b| a - b),
                _ => x.zip(y, |a, b| a * b),
            })
        }
        Op::Neg => Ok(x.map(|a| -a)),
        Op::Scale(c) => {
            let c = *c;
            Ok(x.map(|a| a * c))
        }
        Op::MatMul { trans_a, trans_b } => matmul(x, inputs[1], *trans_a, *trans_b),
        Op::Sum => Ok(Tensor::scalar(x.data().iter().sum())),
        Op::Mean => {
            if x.is_empty() {
                return Err(String::from("mean of an empty tensor"));
            }
            Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64))
        }
        Op::Broadcast(target) => broadcast(x, target),
        Op::SumTo(target) => sum_to(x, target),
        Op::Exp => Ok(x.map(math::exp)),
        Op::Log => Ok(x.map(math::ln)),
        Op::Tanh => Ok(x.map(math::tanh)),
        Op::Softplus => Ok(x.map(math::softplus)),
        Op::Mish => Ok(x.map(math::mish)),
        Op::LogCosh => Ok(x.map(math::logcosh)),
        Op::Sin => Ok(x.map(math::sin)),
        Op::Cos => Ok(x.map(math::cos)),
        Op::Concat { axis } => concat(inputs, *axis),
        Op::Slice { axis, start, len } => slice(x, *axis, *start, *len),
        Op::Input(_) | Op::Constant => unreachable!(),
    }
}

fn matrix_dims(t: &Tensor, transposed: bool) -> Result<(usize, usize), String> {
    if t.shape().len() != 2 {
        return Err(format!("matmul operand must be rank 2, got shape {:?}", t.shape()));
    }
    let (r, c) = (t.shape()[0], t.shape()[1]);
    Ok(if transposed { (c, r) } else { (r, c) })
}

fn matmul(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor, String> {
    let (m, k) = matrix_dims(a, trans_a)?;
    let (k2, n) = matrix_dims(b, trans_b)?;
    if k != k2 {
        return Err(format!(
            "inner dimensions differ: {:?}{} x {:?}{}",
            a.shape(),
            if trans_a { "ᵀ" } else { "" },
            b.shape(),
            if trans_b { "ᵀ" } else { "" }
        ));
    }
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        // SAFETY: strides describe exactly the row-major buffers checked above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data().as_ptr(),
                rsa,
                csa,
                b.data().as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::new(vec![m, n], out).map_err(|e| format!("{e}"))
}

/// Input strides expressed in the target's index space (0 on broadcast axes).
fn broadcast_strides(small: &[usize], large: &[usize]) -> Result<Vec<usize>, String> {
    if small.len() > large.len() {
        return Err(format!("cannot broadcast {small:?} to {large:?}"));
    }
    let offset = large.len() - small.len();
    let mut strides = vec![0; large.len()];
    let mut stride = 1;
    for i in (0..small.len()).rev() {
        let (s, l) = (small[i], large[offset + i]);
        if s == l {
            strides[offset + i] = if s == 1 { 0 } else { stride };
        } else if s != 1 {
            return Err(format!("cannot broadcast {small:?} to {large:?}"));
        }
        stride *= s;
    }
    Ok(strides)
}

/// Calls `f(target_index, source_index)` for every element of `large`.
fn for_each_broadcast(large: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = large.iter().product();
    if total == 0 {
        return;
    }
    let rank = large.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for dst in 0..total {
        f(dst, src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < large[d] {
                break;
            }
            src -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

fn broadcast(x: &Tensor, target: &[usize]) -> Result<Tensor, String> {
    let strides = broadcast_strides(x.shape(), target)?;
    let total: usize = target.iter().product();
    if x.len() == 1 {
        return Ok(Tensor::full(target, x.data()[0]));
    }
    let mut out = Vec::with_capacity(total);
    // Suffix case (e.g. a bias row repeated over a batch).
    if total % x.len() == 0 && target.ends_with(x.shape()) {
        for _ in 0..total / x.len() {
            out.extend_from_slice(x.data());
        }
    } else {
        out.resize(total, 0.0);
        let src = x.data();
        for_each_broadcast(target, &strides, |d, s| out[d] = src[s]);
    }
    Tensor::new(target.to_vec(), out).map_err(|e| format!("{e}"))
}

fn sum_to(x: &Tensor, target: &[usize]) -> Result<Tensor, String> {
    let strides = broadcast_strides(target, x.shape())?;
    let n: usize = target.iter().product();
    let mut out = vec![0.0; n];
    if n == 1 {
        out[0] = x.data().iter().sum();
    } else if x.shape().ends_with(target) {
        for chunk in x.data().chunks_exact(n) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
    } else {
        let src = x.data();
        for_each_broadcast(x.shape(), &strides, |d, s| out[s] += src[d]);
    }
    Tensor::new(target.to_vec(), out).map_err(|e| format!("{e}"))
}

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize), String> {
    if axis >= shape.len() {
        return Err(format!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn concat(inputs: &[&Tensor], axis: usize) -> Result<Tensor, String> {
    let first = inputs[0].shape();
    let (outer, _, inner) = split_axis(first, axis)?;
    let mut axis_total = 0;
    for t in inputs {
        let s = t.shape();
        let compatible = s.len() == first.len()
            && s.iter().zip(first).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(format!("concat along axis {axis}: shape {s:?} incompatible with {first:?}"));
        }
        axis_total += s[axis];
    }
    let mut out = Vec::with_capacity(outer * axis_total * inner);
    for o in 0..outer {
        for t in inputs {
            let block = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
        }
    }
    let mut shape = first.to_vec();
    shape[axis] = axis_total;
    Tensor::new(shape, out).map_err(|e| format!("{e}"))
}

fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor, String> {
    let (outer, extent, inner) = split_axis(x.shape(), axis)?;
    if start + len > extent {
        return Err(format!("slice {start}..{} exceeds axis {axis} of shape {:?}", start + len, x.shape()));
    }
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(shape, out).map_err(|e| format!("{e}"))
}
