//! Losses, Adam, and the MAML inner/outer loops plus the joint pre-training
//! baseline.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::model::{self, GraphBatch, ModelError, ModelParams, ParamVars, NODE_FEATURES};
use crate::physics::{System, Trajectory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainingError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("length mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at iteration {iteration}: {detail}")]
    NonFinite { what: &'static str, iteration: usize, detail: String },
    #[error("no training trajectories available")]
    EmptyDataset,
}

impl From<AutodiffError> for TrainingError {
    fn from(e: AutodiffError) -> Self {
        TrainingError::Model(ModelError::Autodiff(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `Σ logcosh(ẋ - J∇H)` over points and components.
    LogCosh,
    /// `Σ ‖∂H/∂p - q̇‖₂ + ‖∂H/∂q + ṗ‖₂` over points.
    HnnL2,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::LogCosh => "logcosh",
            LossKind::HnnL2 => "hnn_l2",
        }
    }
}

impl core::str::FromStr for LossKind {
    type Err = TrainingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logcosh" | "log-cosh" => Ok(LossKind::LogCosh),
            "hnn_l2" | "hnn-l2" | "l2" => Ok(LossKind::HnnL2),
            other => Err(TrainingError::Config(format!("unknown loss `{other}`"))),
        }
    }
}

/// Support points (and optionally a disjoint query set) drawn from one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskBatch {
    pub system: System,
    pub support: PointSet,
    pub query: Option<PointSet>,
}

/// States with ground-truth derivatives, pre-encoded as a graph batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub indices: Vec<usize>,
    pub batch: GraphBatch,
    /// Node-layout targets (`n_nodes × 4`, columns `q̇₁ q̇₂ ṗ₁ ṗ₂`).
    pub targets: Tensor,
}

impl PointSet {
    pub fn new(system: System, states: &[&[f64]], derivs: &[&[f64]], indices: Vec<usize>) -> Result<Self, ModelError> {
        let batch = GraphBatch::from_states(system, states.iter().copied())?;
        let mut targets = Vec::with_capacity(batch.n_nodes() * NODE_FEATURES);
        for d in derivs {
            targets.extend_from_slice(&system.to_graph(d)?.features);
        }
        let targets = Tensor::matrix(batch.n_nodes(), NODE_FEATURES, targets)?;
        Ok(Self { indices, batch, targets })
    }

    pub fn from_trajectory(traj: &Trajectory, indices: Vec<usize>) -> Result<Self, ModelError> {
        let states: Vec<&[f64]> = indices.iter().map(|&i| traj.states[i].as_slice()).collect();
        let derivs: Vec<&[f64]> = indices.iter().map(|&i| traj.derivs[i].as_slice()).collect();
        Self::new(traj.system, &states, &derivs, indices)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl TaskBatch {
    /// `k` points sampled without replacement; with `disjoint_query`, a second
    /// disjoint set of `k` points for the outer loss.
    pub fn sample<R: Rng + ?Sized>(
        traj: &Trajectory,
        k: usize,
        disjoint_query: bool,
        rng: &mut R,
    ) -> Result<Self, TrainingError> {
        let needed = if disjoint_query { 2 * k } else { k };
        if k == 0 || needed > traj.len() {
            return Err(TrainingError::Config(format!(
                "cannot draw {needed} points from a trajectory of {}",
                traj.len()
            )));
        }
        let picked = index::sample(rng, traj.len(), needed).into_vec();
        let support = PointSet::from_trajectory(traj, picked[..k].to_vec())?;
        let query = if disjoint_query { Some(PointSet::from_trajectory(traj, picked[k..].to_vec())?) } else { None };
        Ok(Self { system: traj.system, support, query })
    }

    pub fn from_points(traj: &Trajectory, indices: Vec<usize>) -> Result<Self, TrainingError> {
        if indices.iter().any(|&i| i >= traj.len()) {
            return Err(TrainingError::Config(String::from("point index outside trajectory")));
        }
        Ok(Self { system: traj.system, support: PointSet::from_trajectory(traj, indices)?, query: None })
    }

    /// Points the outer (post-adaptation) loss is evaluated on.
    pub fn query_set(&self) -> &PointSet {
        self.query.as_ref().unwrap_or(&self.support)
    }
}

/// Loss of `params` on `points`.
///
/// The input gradient inside the loss is always recorded; `create_graph`
/// controls whether the loss stays differentiable with respect to `params`.
pub fn loss(
    tape: &mut Tape,
    params: &ParamVars,
    points: &PointSet,
    kind: LossKind,
    create_graph: bool,
) -> Result<Var, ModelError> {
    let field = model::symplectic_field(tape, params, &points.batch, create_graph)?;
    residual_loss(tape, field, points, kind)
}

/// Loss of a node-layout predicted field against the targets of `points`.
pub fn residual_loss(tape: &mut Tape, field: Var, points: &PointSet, kind: LossKind) -> Result<Var, ModelError> {
    let target = tape.constant(points.targets.clone());
    let r = tape.sub(target, field)?;
    Ok(match kind {
        LossKind::LogCosh => {
            let l = tape.logcosh(r)?;
            tape.sum(l)?
        }
        LossKind::HnnL2 => {
            let sq = tape.mul(r, r)?;
            let ones = tape.constant(Tensor::full(&[2, 1], 1.0));
            let graph_sum = points.batch.pooling.as_ref().map(|p| {
                // per-graph sum over nodes: mean-pool matrix scaled by node count
                let n = points.batch.n_nodes() / points.batch.n_graphs;
                let scaled: Vec<f64> = p.data().iter().map(|v| v * n as f64).collect();
                Tensor::matrix(points.batch.n_graphs, points.batch.n_nodes(), scaled).expect("sized")
            });
            let graph_sum = graph_sum.map(|t| tape.constant(t));
            let mut total = None;
            for start in [0, 2] {
                let block = tape.slice(sq, 1, start, 2)?;
                let mut per_point = tape.matmul(block, ones)?;
                if let Some(s) = graph_sum {
                    per_point = tape.matmul(s, per_point)?;
                }
                // ‖·‖₂ = exp(½ ln Σ r²)
                let l = tape.log(per_point)?;
                let l = tape.scale(l, 0.5)?;
                let norm = tape.exp(l)?;
                let s = tape.sum(norm)?;
                total = Some(match total {
                    Some(t) => tape.add(t, s)?,
                    None => s,
                });
            }
            total.expect("two blocks")
        }
    })
}

/// `steps` plain gradient-descent updates `θ ← θ - α ∇L(θ)` recorded on the tape.
///
/// With `create_graph` the returned parameters keep their dependence on the
/// initial ones through the gradients (full second-order MAML). Without it the
/// gradients are detached constants, so `∂θ'/∂θ = I` (first-order MAML).
/// Returns the adapted variables and the loss before each step.
pub fn inner_adapt_with<F>(
    tape: &mut Tape,
    params: &[Var],
    alpha: f64,
    steps: usize,
    create_graph: bool,
    mut loss_fn: F,
) -> Result<(Vec<Var>, Vec<f64>), TrainingError>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, TrainingError>,
{
    if steps == 0 {
        return Err(TrainingError::Config(String::from("inner_steps must be at least 1")));
    }
    let mut theta = params.to_vec();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let l = loss_fn(tape, &theta)?;
        losses.push(tape.value(l)?.item().unwrap_or(f64::NAN));
        let grads = tape.gradient(l, &theta, create_graph)?;
        let mut next = Vec::with_capacity(theta.len());
        for (&t, &g) in theta.iter().zip(&grads) {
            let step = tape.scale(g, alpha)?;
            next.push(tape.sub(t, step)?);
        }
        theta = next;
    }
    Ok((theta, losses))
}

/// Model-level inner loop on the task's support set.
pub fn inner_adapt(
    tape: &mut Tape,
    params: &ParamVars,
    task: &TaskBatch,
    alpha: f64,
    steps: usize,
    create_graph: bool,
    kind: LossKind,
) -> Result<(ParamVars, Vec<f64>), TrainingError> {
    let arch = params.arch.clone();
    let (vars, losses) = inner_adapt_with(tape, &params.vars(), alpha, steps, create_graph, |tape, theta| {
        let pv = ParamVars::from_vars(&arch, theta);
        Ok(loss(tape, &pv, &task.support, kind, true)?)
    })?;
    Ok((ParamVars::from_vars(&arch, &vars), losses))
}

/// Gradient of the post-adaptation loss with respect to the initial
/// parameters, for an arbitrary differentiable objective.
pub fn meta_gradient_with<F>(
    params: &[Tensor],
    alpha: f64,
    steps: usize,
    first_order: bool,
    mut inner_loss: F,
    mut outer_loss: impl FnMut(&mut Tape, &[Var]) -> Result<Var, TrainingError>,
) -> Result<(Vec<Tensor>, f64, f64), TrainingError>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, TrainingError>,
{
    let mut tape = Tape::new();
    let theta: Vec<Var> =
        params.iter().enumerate().map(|(i, p)| tape.input(format!("theta{i}"), p.clone())).collect();
    let (adapted, pre) = inner_adapt_with(&mut tape, &theta, alpha, steps, !first_order, &mut inner_loss)?;
    let l = outer_loss(&mut tape, &adapted)?;
    let post = tape.value(l)?.item().unwrap_or(f64::NAN);
    let grads = tape.gradient_values(l, &theta)?;
    Ok((grads, pre[0], post))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam step applied in place.
pub fn adam_update(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<(), TrainingError> {
    if grad.len() != params.len() {
        return Err(TrainingError::Shape { expected: params.len(), got: grad.len() });
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainingError::Shape { expected: params.len(), got: state.m.len() });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - crate::math::powi(b1, t);
    let c2 = 1.0 - crate::math::powi(b2, t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (crate::math::sqrt(v_hat) + state.eps);
    }
    Ok(())
}

/// Meta-training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    /// Inner-loop learning rate α.
    pub inner_lr: f64,
    /// Outer-loop (Adam) learning rate β.
    pub outer_lr: f64,
    pub inner_steps: usize,
    pub outer_iterations: usize,
    pub task_batch_size: usize,
    /// Support points per task.
    pub k_points: usize,
    pub first_order: bool,
    pub loss: LossKind,
    /// Evaluate the outer loss on K further points instead of the support set.
    pub disjoint_query: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_lr: 0.001,
            outer_lr: 0.0005,
            inner_steps: 1,
            outer_iterations: 5000,
            task_batch_size: 10,
            k_points: 50,
            first_order: false,
            loss: LossKind::LogCosh,
            disjoint_query: false,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let positive = self.inner_lr > 0.0
            && self.outer_lr > 0.0
            && self.inner_steps >= 1
            && self.outer_iterations >= 1
            && self.task_batch_size >= 1
            && self.k_points >= 1;
        if !positive {
            return Err(TrainingError::Config(String::from("learning rates, steps and sizes must be positive")));
        }
        let limit = if self.disjoint_query { crate::physics::TRAJECTORY_STEPS / 2 } else { crate::physics::TRAJECTORY_STEPS };
        if self.k_points > limit {
            return Err(TrainingError::Config(format!("k_points {} exceeds {limit}", self.k_points)));
        }
        Ok(())
    }
}

/// Losses observed during one outer iteration (means over the task batch).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Loss before the inner update (for pre-training, the training loss).
    pub inner_loss: f64,
    /// Loss after the inner update (for pre-training, equal to `inner_loss`).
    pub outer_loss: f64,
}

fn accumulate(sum: &mut [f64], grads: &[Tensor]) {
    let mut offset = 0;
    for g in grads {
        for (s, v) in sum[offset..offset + g.len()].iter_mut().zip(g.data()) {
            *s += v;
        }
        offset += g.len();
    }
}

fn task_meta_gradient(
    params: &ModelParams,
    task: &TaskBatch,
    cfg: &MetaConfig,
) -> Result<(Vec<Tensor>, f64, f64), TrainingError> {
    let mut tape = Tape::new();
    let theta = params.register(&mut tape);
    let (adapted, pre) = inner_adapt(&mut tape, &theta, task, cfg.inner_lr, cfg.inner_steps, !cfg.first_order, cfg.loss)?;
    let l = loss(&mut tape, &adapted, task.query_set(), cfg.loss, true)?;
    let post = tape.value(l)?.item().unwrap_or(f64::NAN);
    let grads = tape.gradient_values(l, &theta.vars())?;
    Ok((grads, pre[0], post))
}

fn apply_update(
    params: &mut ModelParams,
    grad: &[f64],
    adam: &mut AdamState,
    lr: f64,
    iteration: usize,
) -> Result<(), TrainingError> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(TrainingError::NonFinite {
            what: "gradient",
            iteration,
            detail: format!("entry {i} of {} is {}", grad.len(), grad[i]),
        });
    }
    let mut flat = params.flatten();
    adam_update(&mut flat, grad, adam, lr)?;
    *params = ModelParams::unflatten(&params.arch, &flat)?;
    Ok(())
}

/// One MAML outer update: `θ ← Adam(θ, ∇_θ Σ_τ L_τ(θ'_τ))`.
pub fn maml_outer_step(
    params: &mut ModelParams,
    tasks: &[TaskBatch],
    cfg: &MetaConfig,
    adam: &mut AdamState,
    iteration: usize,
) -> Result<StepStats, TrainingError> {
    let mut sum = vec![0.0; params.param_count()];
    let (mut pre, mut post) = (0.0, 0.0);
    for task in tasks {
        let (grads, l_pre, l_post) = task_meta_gradient(params, task, cfg)?;
        if !l_post.is_finite() || !l_pre.is_finite() {
            return Err(TrainingError::NonFinite {
                what: "loss",
                iteration,
                detail: format!("{} task: pre {l_pre}, post {l_post}", task.system),
            });
        }
        accumulate(&mut sum, &grads);
        pre += l_pre;
        post += l_post;
    }
    apply_update(params, &sum, adam, cfg.outer_lr, iteration)?;
    let n = tasks.len().max(1) as f64;
    Ok(StepStats { inner_loss: pre / n, outer_loss: post / n })
}

/// One joint pre-training update: `θ ← Adam(θ, ∇_θ Σ_τ L_τ(θ))` on the same
/// task batches meta-training would see.
pub fn pretrain_step(
    params: &mut ModelParams,
    tasks: &[TaskBatch],
    cfg: &MetaConfig,
    adam: &mut AdamState,
    iteration: usize,
) -> Result<StepStats, TrainingError> {
    let mut sum = vec![0.0; params.param_count()];
    let mut total = 0.0;
    for task in tasks {
        let mut tape = Tape::new();
        let theta = params.register(&mut tape);
        let l = loss(&mut tape, &theta, &task.support, cfg.loss, true)?;
        let value = tape.value(l)?.item().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(TrainingError::NonFinite { what: "loss", iteration, detail: format!("{} task: {value}", task.system) });
        }
        let grads = tape.gradient_values(l, &theta.vars())?;
        accumulate(&mut sum, &grads);
        total += value;
    }
    apply_update(params, &sum, adam, cfg.outer_lr, iteration)?;
    let mean = total / tasks.len().max(1) as f64;
    Ok(StepStats { inner_loss: mean, outer_loss: mean })
}

/// Training trajectories grouped by system.
#[derive(Clone, Debug, Default)]
pub struct TaskPool<'a> {
    groups: Vec<(System, &'a [Trajectory])>,
}

impl<'a> TaskPool<'a> {
    pub fn new() -> Self {
        Self { groups: Vec::new() }
    }

    pub fn add(&mut self, system: System, trajectories: &'a [Trajectory]) -> &mut Self {
        if !trajectories.is_empty() {
            self.groups.push((system, trajectories));
        }
        self
    }

    pub fn systems(&self) -> Vec<System> {
        self.groups.iter().map(|g| g.0).collect()
    }

    /// Draws `cfg.task_batch_size` tasks: a system uniformly, then a trajectory
    /// uniformly, then `k_points` points without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, cfg: &MetaConfig, rng: &mut R) -> Result<Vec<TaskBatch>, TrainingError> {
        if self.groups.is_empty() {
            return Err(TrainingError::EmptyDataset);
        }
        (0..cfg.task_batch_size)
            .map(|_| {
                let (_, trajs) = self.groups[rng.random_range(0..self.groups.len())];
                let traj = &trajs[rng.random_range(0..trajs.len())];
                TaskBatch::sample(traj, cfg.k_points, cfg.disjoint_query, rng)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrainingMode {
    Meta,
    Pretrain,
}

impl TrainingMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainingMode::Meta => "metatrain",
            TrainingMode::Pretrain => "pretrain",
        }
    }
}

/// Iteration driver shared by meta-training and pre-training. Both modes
/// draw identical task batches for a given seed.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub params: ModelParams,
    pub adam: AdamState,
    pub cfg: MetaConfig,
    pub mode: TrainingMode,
    pub iteration: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(params: ModelParams, cfg: MetaConfig, mode: TrainingMode, seed: u64) -> Result<Self, TrainingError> {
        cfg.validate()?;
        let adam = AdamState::new(params.param_count());
        Ok(Self { params, adam, cfg, mode, iteration: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn step(&mut self, pool: &TaskPool<'_>) -> Result<StepStats, TrainingError> {
        let tasks = pool.sample(&self.cfg, &mut self.rng)?;
        let it = self.iteration;
        let stats = match self.mode {
            TrainingMode::Meta => maml_outer_step(&mut self.params, &tasks, &self.cfg, &mut self.adam, it)?,
            TrainingMode::Pretrain => pretrain_step(&mut self.params, &tasks, &self.cfg, &mut self.adam, it)?,
        };
        self.iteration += 1;
        Ok(stats)
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.outer_iterations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        s.m = vec![0.5, 0.5];
        s.v = vec![0.25, 0.25];
        adam_update(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        // moments decay, parameters move only by the decayed momentum
        assert!((s.m[0] - 0.45).abs() < 1e-15);
        assert!((s.v[0] - 0.25 * 0.999).abs() < 1e-15);
        let mut fresh = AdamState::new(2);
        let mut q = vec![1.0, -2.0];
        adam_update(&mut q, &[0.0, 0.0], &mut fresh, 0.1).unwrap();
        assert_eq!(q, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        for g in [1e-3, 0.7, 42.0, -5.0] {
            let mut p = vec![0.0];
            let mut s = AdamState::new(1);
            adam_update(&mut p, &[g], &mut s, 0.01).unwrap();
            // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-17, "g={g} p={}", p[0]);
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        assert!(matches!(adam_update(&mut p, &[1.0], &mut s, 0.1), Err(TrainingError::Shape { .. })));
    }

    #[test]
    fn meta_config_defaults_are_valid() {
        let cfg = MetaConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.inner_lr, cfg.outer_lr, cfg.inner_steps, cfg.task_batch_size, cfg.k_points), (0.001, 0.0005, 1, 10, 50));
        let bad = MetaConfig { k_points: 201, ..MetaConfig::default() };
        assert!(bad.validate().is_err());
    }
}
