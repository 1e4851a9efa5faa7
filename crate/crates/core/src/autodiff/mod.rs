//! Tape-based reverse-mode automatic differentiation with recordable backward
//! passes, so gradients can be differentiated again (input gradients inside a
//! loss, and MAML meta-gradients through an inner update).

mod ops;
mod tape;
mod tensor;

use alloc::string::String;
use alloc::vec::Vec;

pub use tape::{Evaluation, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("node {node} ({op}): {detail}")]
    Shape { node: usize, op: &'static str, detail: String },
    #[error("shape {shape:?} does not match {len} data values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("gradient output must be a scalar, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("variable is not a node of this tape")]
    ForeignVar,
    #[error("{0} is not a named input and cannot be perturbed")]
    NotAnInput(Var),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("non-finite value encountered at {0}")]
    NonFinite(&'static str),
}

/// Compares [`Tape::grad`] against central differences of the replayed tape.
///
/// Every `wrt` must be a named input. Returns the worst elementwise deviation
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3·max|analytic|, 1e-10)`.
/// The scale-relative floor keeps entries that are tiny compared with the rest
/// of the gradient from being judged on pure rounding noise.
pub fn finite_diff_check(tape: &mut Tape, output: Var, wrt: &[Var], h: f64) -> Result<f64, AutodiffError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(AutodiffError::InvalidStep(h));
    }
    let analytic = tape.gradient_values(output, wrt)?;
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(AutodiffError::NonFinite("analytic gradient"));
    }
    let scale = analytic
        .iter()
        .flat_map(|g| g.data().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-10);

    let mut bindings = tape.current_bindings();
    let mut worst = 0.0f64;
    for (&w, grad) in wrt.iter().zip(&analytic) {
        let name = String::from(tape.input_name(w).ok_or(AutodiffError::NotAnInput(w))?);
        let base = bindings[&name].clone();
        for k in 0..base.len() {
            let mut probe = |delta: f64| -> Result<f64, AutodiffError> {
                let mut t = base.clone();
                t.data_mut()[k] += delta;
                bindings.insert(name.clone(), t);
                let eval = tape.evaluate(&bindings)?;
                let v = eval.value(output)?.item().ok_or(AutodiffError::NonScalarOutput {
                    shape: eval.value(output)?.shape().to_vec(),
                })?;
                if !v.is_finite() {
                    return Err(AutodiffError::NonFinite("perturbed output"));
                }
                Ok(v)
            };
            let numeric = (probe(h)? - probe(-h)?) / (2.0 * h);
            let a = grad.data()[k];
            let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(dev);
        }
        bindings.insert(name, base);
    }
    Ok(worst)
}
