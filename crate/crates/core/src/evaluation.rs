//! Held-out adaptation, rollouts, error metrics and CKA.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Tensor};
use crate::integrator::{self, FieldError, IntegrationError, IntegratorConfig, VectorField};
use crate::math;
use crate::model::{self, GraphBatch, LayerId, ModelError, ModelParams};
use crate::physics::{System, Trajectory};
use crate::training::{self, AdamState, LossKind, PointSet, TrainingError};

/// Offset inside the logarithm of the geometric moving average.
pub const GMA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error("CKA needs at least 2 examples with matching counts, got {x} and {y}")]
    ExampleCount { x: usize, y: usize },
    #[error("{which} activations have zero variance after centering")]
    ZeroVariance { which: &'static str },
    #[error("trainable mask has {got} entries, model has {expected} layers")]
    Mask { expected: usize, got: usize },
    #[error("invalid evaluation setting: {0}")]
    Config(String),
}

impl From<crate::autodiff::AutodiffError> for EvalError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        EvalError::Model(ModelError::Autodiff(e))
    }
}

/// Adam learning rate used when adapting to a held-out system.
pub fn default_adapt_lr(system: System) -> f64 {
    match system {
        System::TwoBody => 1e-5,
        System::ThreeBody => 5e-5,
        _ => 1e-4,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub lr: f64,
    pub steps: usize,
    pub loss: LossKind,
    /// Per-layer trainable flags; `None` trains every layer.
    pub trainable: Option<Vec<bool>>,
}

impl AdaptConfig {
    pub fn for_system(system: System, steps: usize) -> Self {
        Self { lr: default_adapt_lr(system), steps, loss: LossKind::LogCosh, trainable: None }
    }
}

/// Adapts `params` to `points` with Adam, calling `visit(step, params, loss)`
/// for every step `0..=steps` before the update at that step.
pub fn adapt_with<F>(params: &ModelParams, points: &PointSet, cfg: &AdaptConfig, mut visit: F) -> Result<ModelParams, EvalError>
where
    F: FnMut(usize, &ModelParams, f64) -> Result<(), EvalError>,
{
    if cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return Err(EvalError::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    let n_layers = params.layers.len();
    let mask: Option<Vec<bool>> = match &cfg.trainable {
        Some(m) if m.len() != n_layers => return Err(EvalError::Mask { expected: n_layers, got: m.len() }),
        Some(m) => Some(m.clone()),
        None => None,
    };
    let mut current = params.clone();
    let mut adam = AdamState::new(current.param_count());
    for step in 0..=cfg.steps {
        let mut tape = Tape::new();
        let theta = current.register(&mut tape);
        let last = step == cfg.steps;
        let l = training::loss(&mut tape, &theta, points, cfg.loss, !last)?;
        let value = tape.value(l)?.item().unwrap_or(f64::NAN);
        visit(step, &current, value)?;
        if last {
            break;
        }
        if !value.is_finite() {
            return Err(TrainingError::NonFinite { what: "loss", iteration: step, detail: format!("{value}") }.into());
        }
        let grads = tape.gradient_values(l, &theta.vars())?;
        let mut flat_grad = Vec::with_capacity(current.param_count());
        for (i, g) in grads.iter().enumerate() {
            let layer_trainable = mask.as_ref().map_or(true, |m| m[i / 2]);
            if layer_trainable {
                flat_grad.extend_from_slice(g.data());
            } else {
                flat_grad.extend(core::iter::repeat(0.0).take(g.len()));
            }
        }
        if let Some(i) = flat_grad.iter().position(|g| !g.is_finite()) {
            return Err(TrainingError::NonFinite { what: "gradient", iteration: step, detail: format!("entry {i}") }.into());
        }
        let mut flat = current.flatten();
        training::adam_update(&mut flat, &flat_grad, &mut adam, cfg.lr)?;
        current = ModelParams::unflatten(&current.arch, &flat)?;
    }
    Ok(current)
}

/// Every intermediate parameter set: `steps + 1` entries, the first being `params`.
pub fn adapt(params: &ModelParams, points: &PointSet, cfg: &AdaptConfig) -> Result<Vec<ModelParams>, EvalError> {
    let mut out = Vec::with_capacity(cfg.steps + 1);
    adapt_with(params, points, cfg, |_, p, _| {
        out.push(p.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Predicted trajectory. On integrator failure `states` stops early and
/// `failure` holds the cause.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub failure: Option<IntegrationError>,
}

impl Rollout {
    pub fn is_truncated(&self) -> bool {
        self.states.len() < self.times.len()
    }

    /// Relative error against `truth` at every requested time; times past a
    /// truncation get error 1.
    pub fn errors(&self, truth: &[Vec<f64>]) -> Vec<f64> {
        truth
            .iter()
            .enumerate()
            .map(|(i, z)| self.states.get(i).map_or(1.0, |zh| relative_error(zh, z)))
            .collect()
    }
}

/// Integrates an arbitrary field from `x0` over `times`.
pub fn rollout_with<F: VectorField + ?Sized>(field: &mut F, x0: &[f64], times: &[f64], cfg: &IntegratorConfig) -> Rollout {
    let (solution, failure) = integrator::integrate_partial(field, x0, times, cfg);
    Rollout { times: times.to_vec(), states: solution.states, failure }
}

/// Integrates the learned symplectic field from `x0` over `times`.
pub fn rollout(params: &ModelParams, system: System, x0: &[f64], times: &[f64], cfg: &IntegratorConfig) -> Rollout {
    let mut field = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), FieldError> {
        let f = model::predict_field(params, system, y).map_err(|e| FieldError(format!("{e}")))?;
        dy.copy_from_slice(&f);
        Ok(())
    };
    rollout_with(&mut field, x0, times, cfg)
}

/// Integrates the closed-form field of `system`.
pub fn rollout_analytic(system: System, x0: &[f64], times: &[f64], cfg: &IntegratorConfig) -> Rollout {
    let mut field = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), FieldError> {
        system.analytic_field(y, dy).map_err(|e| FieldError(format!("{e}")))
    };
    rollout_with(&mut field, x0, times, cfg)
}

/// `‖ẑ - z‖ / (‖ẑ‖ + ‖z‖)`, zero when both are zero.
pub fn relative_error(pred: &[f64], truth: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), truth.len());
    let diff = math::sqrt(pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum());
    let denom = math::norm2(pred) + math::norm2(truth);
    if denom == 0.0 {
        0.0
    } else {
        (diff / denom).clamp(0.0, 1.0)
    }
}

/// Cumulative geometric mean `exp(mean_{τ≤t} ln(err(τ) + ε))`.
pub fn geometric_moving_average(errs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    errs.iter()
        .enumerate()
        .map(|(i, e)| {
            acc += math::ln(e + GMA_EPS);
            math::exp(acc / (i + 1) as f64)
        })
        .collect()
}

fn centered(x: &Tensor) -> (Vec<f64>, usize, usize, f64) {
    let (n, d) = (x.rows(), x.cols());
    let mut c = x.data().to_vec();
    let raw = math::norm2(&c);
    for j in 0..d {
        let mean = (0..n).map(|i| c[i * d + j]).sum::<f64>() / n as f64;
        for i in 0..n {
            c[i * d + j] -= mean;
        }
    }
    (c, n, d, raw)
}

/// `Σ_{jk} (AᵀB)_{jk}²` for row-major `a: n×da`, `b: n×db`.
fn cross_sq(a: &[f64], da: usize, b: &[f64], db: usize, n: usize) -> f64 {
    let mut m = vec![0.0; da * db];
    for i in 0..n {
        let ra = &a[i * da..(i + 1) * da];
        let rb = &b[i * db..(i + 1) * db];
        for (j, &x) in ra.iter().enumerate() {
            let row = &mut m[j * db..(j + 1) * db];
            for (r, &y) in row.iter_mut().zip(rb) {
                *r += x * y;
            }
        }
    }
    m.iter().map(|v| v * v).sum()
}

/// Linear CKA between two `examples × features` matrices.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64, EvalError> {
    if x.shape().len() != 2 || y.shape().len() != 2 || x.rows() != y.rows() || x.rows() < 2 {
        return Err(EvalError::ExampleCount { x: x.shape().first().copied().unwrap_or(0), y: y.shape().first().copied().unwrap_or(0) });
    }
    let (xc, n, dx, x_raw) = centered(x);
    let (yc, _, dy, y_raw) = centered(y);
    let zero_var = |c: &[f64], raw: f64| {
        let norm = math::norm2(c);
        norm == 0.0 || norm <= 1e-12 * raw
    };
    if zero_var(&xc, x_raw) {
        return Err(EvalError::ZeroVariance { which: "first" });
    }
    if zero_var(&yc, y_raw) {
        return Err(EvalError::ZeroVariance { which: "second" });
    }
    let sxx = cross_sq(&xc, dx, &xc, dx, n);
    let syy = cross_sq(&yc, dy, &yc, dy, n);
    let sxy = cross_sq(&yc, dy, &xc, dx, n);
    // sqrt(s·s) == s exactly, so identical inputs give exactly 1
    Ok((sxy / math::sqrt(sxx * syy)).clamp(0.0, 1.0))
}

/// `1 - CKA(act(θ₀), act(θ_s))` at `layer` for `s = 0..=steps`.
pub fn cka_adaptation_curve(
    params: &ModelParams,
    points: &PointSet,
    probe: &GraphBatch,
    cfg: &AdaptConfig,
    layer: LayerId,
) -> Result<Vec<f64>, EvalError> {
    let reference = model::layer_activations(params, probe, layer)?;
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    adapt_with(params, points, cfg, |_, p, _| {
        let act = model::layer_activations(p, probe, layer)?;
        curve.push(1.0 - linear_cka(&reference, &act)?);
        Ok(())
    })?;
    Ok(curve)
}

/// `n` states drawn uniformly (trajectory, then time index) from `trajs`.
pub fn probe_states<R: Rng + ?Sized>(trajs: &[Trajectory], n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    if trajs.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let t = &trajs[rng.random_range(0..trajs.len())];
            t.states[rng.random_range(0..t.len())].clone()
        })
        .collect()
}

/// Errors of one rollout after a given number of adaptation steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorCurve {
    pub seed: u64,
    pub system: System,
    pub adaptation_step: usize,
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub gma: Vec<f64>,
    pub truncated: bool,
    /// Support loss at this adaptation step.
    pub loss: f64,
}

impl ErrorCurve {
    pub fn from_rollout(seed: u64, system: System, adaptation_step: usize, rollout: &Rollout, truth: &[Vec<f64>], loss: f64) -> Self {
        let errors = rollout.errors(truth);
        let gma = geometric_moving_average(&errors);
        Self {
            seed,
            system,
            adaptation_step,
            times: rollout.times.clone(),
            errors,
            gma,
            truncated: rollout.is_truncated(),
            loss,
        }
    }

    /// GMA over the whole rollout.
    pub fn final_gma(&self) -> f64 {
        self.gma.last().copied().unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    pub adapt: AdaptConfig,
    /// Adaptation steps at which a rollout is recorded.
    pub eval_steps: Vec<usize>,
    pub rollout: IntegratorConfig,
}

impl EvalPlan {
    /// Rollouts every `stride` steps from 0 through `steps`.
    pub fn strided(system: System, steps: usize, stride: usize) -> Self {
        let stride = stride.max(1);
        let mut eval_steps: Vec<usize> = (0..=steps).step_by(stride).collect();
        if eval_steps.last() != Some(&steps) {
            eval_steps.push(steps);
        }
        Self { adapt: AdaptConfig::for_system(system, steps), eval_steps, rollout: IntegratorConfig::ROLLOUT }
    }
}

/// Adapts on `support` points of `test` and rolls out from its first state at
/// every planned step. With `use_analytic_field` the rollouts integrate the
/// true field instead of the model (harness self-test).
pub fn evaluate_seed(
    params: &ModelParams,
    test: &Trajectory,
    support: &PointSet,
    plan: &EvalPlan,
    seed: u64,
    use_analytic_field: bool,
) -> Result<Vec<ErrorCurve>, EvalError> {
    let system = test.system;
    let x0 = &test.states[0];
    let mut curves = Vec::with_capacity(plan.eval_steps.len());
    adapt_with(params, support, &plan.adapt, |step, p, loss| {
        if plan.eval_steps.contains(&step) {
            let r = if use_analytic_field {
                rollout_analytic(system, x0, &test.times, &plan.rollout)
            } else {
                rollout(p, system, x0, &test.times, &plan.rollout)
            };
            curves.push(ErrorCurve::from_rollout(seed, system, step, &r, &test.states, loss));
        }
        Ok(())
    })?;
    Ok(curves)
}

/// Sample mean and standard error of the mean (`s/√n`, zero for `n < 2`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, math::sqrt(var / n as f64))
}

/// Aggregate over seeds at one (adaptation step, rollout time).
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub adaptation_step: usize,
    pub time_index: usize,
    pub rollout_time: f64,
    pub err_mean: f64,
    pub err_stderr: f64,
    pub gma_mean: f64,
    pub gma_stderr: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub curves: Vec<ErrorCurve>,
}

impl EvalReport {
    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.curves.iter().map(|c| c.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn adaptation_steps(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.curves.iter().map(|c| c.adaptation_step).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn curve(&self, seed: u64, step: usize) -> Option<&ErrorCurve> {
        self.curves.iter().find(|c| c.seed == seed && c.adaptation_step == step)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for step in self.adaptation_steps() {
            let at: Vec<&ErrorCurve> = self.curves.iter().filter(|c| c.adaptation_step == step).collect();
            let len = at.iter().map(|c| c.errors.len()).min().unwrap_or(0);
            for ti in 0..len {
                let errs: Vec<f64> = at.iter().map(|c| c.errors[ti]).collect();
                let gmas: Vec<f64> = at.iter().map(|c| c.gma[ti]).collect();
                let (err_mean, err_stderr) = mean_stderr(&errs);
                let (gma_mean, gma_stderr) = mean_stderr(&gmas);
                rows.push(SummaryRow {
                    adaptation_step: step,
                    time_index: ti,
                    rollout_time: at[0].times[ti],
                    err_mean,
                    err_stderr,
                    gma_mean,
                    gma_stderr,
                    n_seeds: at.len(),
                });
            }
        }
        rows
    }
}
