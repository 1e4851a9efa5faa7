//! Graph-convolutional Hamiltonian network and its symplectic gradient.
//!
//! `GCN(4→200) → GCN(200→200) → GCN(200→4) → mean pool → Dense(4→200) →
//! Dense(200→200) → Dense(200→1)`, every layer followed by mish, including
//! the scalar head. With the default widths the network has 83 405
//! parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::math;
use crate::physics::{PhysicsError, System};

/// Width of a node feature vector: two coordinates and two momenta.
pub const NODE_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("unknown layer `{0}` (expected gcN, pool or fcN)")]
    UnknownLayer(String),
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("invalid graph batch: {0}")]
    Batch(String),
}

/// Layer widths. `graph_widths` runs from the node features to the pooled
/// width; `dense_widths` from the pooled width to the scalar output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub graph_widths: Vec<usize>,
    pub dense_widths: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { graph_widths: vec![4, 200, 200, 4], dense_widths: vec![4, 200, 200, 1] }
    }
}

impl Architecture {
    /// Same layer structure with every hidden width set to `hidden`.
    pub fn with_hidden(hidden: usize) -> Self {
        Self {
            graph_widths: vec![NODE_FEATURES, hidden, hidden, NODE_FEATURES],
            dense_widths: vec![NODE_FEATURES, hidden, hidden, 1],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let g = &self.graph_widths;
        let d = &self.dense_widths;
        if g.len() < 2 || g[0] != NODE_FEATURES {
            return Err(ModelError::Architecture(format!("graph widths must start at {NODE_FEATURES}: {g:?}")));
        }
        if d.len() < 2 || d[0] != *g.last().unwrap_or(&0) || *d.last().unwrap_or(&0) != 1 {
            return Err(ModelError::Architecture(format!(
                "dense widths must run from the pooled width to 1: graph {g:?}, dense {d:?}"
            )));
        }
        if g.iter().chain(d).any(|&w| w == 0) {
            return Err(ModelError::Architecture(String::from("zero-width layer")));
        }
        Ok(())
    }

    pub fn n_graph_layers(&self) -> usize {
        self.graph_widths.len() - 1
    }

    pub fn n_dense_layers(&self) -> usize {
        self.dense_widths.len() - 1
    }

    /// `(fan_in, fan_out)` of every layer, graph layers first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.graph_widths
            .windows(2)
            .chain(self.dense_widths.windows(2))
            .map(|w| (w[0], w[1]))
            .collect()
    }

    pub fn layer_names(&self) -> Vec<String> {
        (1..=self.n_graph_layers())
            .map(|i| format!("gc{i}"))
            .chain((1..=self.n_dense_layers()).map(|i| format!("fc{i}")))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Where to read activations from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerId {
    /// 1-based graph-convolution layer.
    Graph(usize),
    Pool,
    /// 1-based dense layer.
    Dense(usize),
}

impl FromStr for LayerId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || ModelError::UnknownLayer(String::from(s));
        if s == "pool" {
            return Ok(LayerId::Pool);
        }
        let (ctor, rest): (fn(usize) -> LayerId, &str) = if let Some(r) = s.strip_prefix("gc") {
            (LayerId::Graph, r)
        } else if let Some(r) = s.strip_prefix("fc") {
            (LayerId::Dense, r)
        } else {
            return Err(unknown());
        };
        match rest.parse::<usize>() {
            Ok(i) if i >= 1 => Ok(ctor(i)),
            _ => Err(unknown()),
        }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerId::Graph(i) => write!(f, "gc{i}"),
            LayerId::Pool => f.write_str("pool"),
            LayerId::Dense(i) => write!(f, "fc{i}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `fan_in × fan_out`.
    pub weight: Tensor,
    pub bias: Tensor,
}

/// All weights of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub layers: Vec<LayerParams>,
}

impl ModelParams {
    /// Uniform `U[-1/√fan_in, 1/√fan_in]` initialization, deterministic in `seed`.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / math::sqrt(fan_in as f64);
                let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
                let weight = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("sized");
                let bias = Tensor::vector(draw(fan_out));
                LayerParams { weight, bias }
            })
            .collect();
        Ok(Self { arch: arch.clone(), layers })
    }

    pub fn zeros(arch: &Architecture) -> Result<Self, ModelError> {
        Self::unflatten(arch, &vec![0.0; arch.param_count()])
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// Weights then bias of each layer, in layer order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn unflatten(arch: &Architecture, flat: &[f64]) -> Result<Self, ModelError> {
        arch.validate()?;
        let expected = arch.param_count();
        if flat.len() != expected {
            return Err(ModelError::ParamCount { expected, got: flat.len() });
        }
        let mut offset = 0;
        let mut take = |n: usize| {
            let s = flat[offset..offset + n].to_vec();
            offset += n;
            s
        };
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(i, o)| LayerParams {
                weight: Tensor::matrix(i, o, take(i * o)).expect("sized"),
                bias: Tensor::vector(take(o)),
            })
            .collect();
        Ok(Self { arch: arch.clone(), layers })
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    /// Places the weights on `tape` as named inputs (`gc1.weight`, ...).
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let names = self.arch.layer_names();
        let layers = self
            .layers
            .iter()
            .zip(names)
            .map(|(l, name)| {
                let w = tape.input(format!("{name}.weight"), l.weight.clone());
                let b = tape.input(format!("{name}.bias"), l.bias.clone());
                (w, b)
            })
            .collect();
        ParamVars { arch: self.arch.clone(), layers }
    }

    /// Places the weights on `tape` as constants (no parameter gradients).
    pub fn register_constant(&self, tape: &mut Tape) -> ParamVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.constant(l.weight.clone()), tape.constant(l.bias.clone())))
            .collect();
        ParamVars { arch: self.arch.clone(), layers }
    }
}

/// Network weights as tape variables; may be leaves or computed (adapted) values.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub arch: Architecture,
    /// `(weight, bias)` per layer, graph layers first.
    pub layers: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    pub fn from_vars(arch: &Architecture, vars: &[Var]) -> Self {
        Self { arch: arch.clone(), layers: vars.chunks_exact(2).map(|c| (c[0], c[1])).collect() }
    }

    /// Current values as [`ModelParams`].
    pub fn values(&self, tape: &Tape) -> Result<ModelParams, ModelError> {
        let layers = self
            .layers
            .iter()
            .map(|&(w, b)| Ok(LayerParams { weight: tape.value(w)?.clone(), bias: tape.value(b)?.clone() }))
            .collect::<Result<Vec<_>, AutodiffError>>()?;
        Ok(ModelParams { arch: self.arch.clone(), layers })
    }
}

/// A batch of graphs sharing one system (and therefore one node count).
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    /// `n_nodes × 4` stacked node features.
    pub features: Tensor,
    /// Block-diagonal normalized adjacency; `None` when every graph is a single
    /// node (the propagation is then the identity).
    pub propagation: Option<Tensor>,
    /// `n_graphs × n_nodes` mean-pooling matrix; `None` when pooling is the identity.
    pub pooling: Option<Tensor>,
    /// Graph index of every node.
    pub membership: Vec<usize>,
    pub n_graphs: usize,
}

impl GraphBatch {
    pub fn from_states<'a>(system: System, states: impl IntoIterator<Item = &'a [f64]>) -> Result<Self, ModelError> {
        let mut features = Vec::new();
        let mut membership = Vec::new();
        let mut n_graphs = 0;
        let n = system.n_particles();
        for state in states {
            let g = system.to_graph(state)?;
            features.extend_from_slice(&g.features);
            membership.extend(core::iter::repeat(n_graphs).take(g.n_nodes));
            n_graphs += 1;
        }
        if n_graphs == 0 {
            return Err(ModelError::Batch(String::from("empty batch")));
        }
        let total = n * n_graphs;
        let (propagation, pooling) = if n == 1 {
            (None, None)
        } else {
            let block = crate::physics::normalized_adjacency(n);
            let mut prop = vec![0.0; total * total];
            let mut pool = vec![0.0; n_graphs * total];
            for g in 0..n_graphs {
                for i in 0..n {
                    for j in 0..n {
                        prop[(g * n + i) * total + g * n + j] = block[i * n + j];
                    }
                    pool[g * total + g * n + i] = 1.0 / n as f64;
                }
            }
            (
                Some(Tensor::matrix(total, total, prop).expect("sized")),
                Some(Tensor::matrix(n_graphs, total, pool).expect("sized")),
            )
        };
        let batch = Self {
            features: Tensor::matrix(total, NODE_FEATURES, features).expect("sized"),
            propagation,
            pooling,
            membership,
            n_graphs,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn n_nodes(&self) -> usize {
        self.membership.len()
    }

    /// Checks that membership partitions the nodes and that each graph's
    /// propagation block has the symmetric normalization's row sums.
    pub fn validate(&self) -> Result<(), ModelError> {
        let nodes = self.n_nodes();
        if self.features.shape() != [nodes, NODE_FEATURES] {
            return Err(ModelError::Batch(format!("features shape {:?} for {nodes} nodes", self.features.shape())));
        }
        let mut counts = vec![0usize; self.n_graphs];
        for &m in &self.membership {
            if m >= self.n_graphs {
                return Err(ModelError::Batch(format!("node assigned to graph {m} of {}", self.n_graphs)));
            }
            counts[m] += 1;
        }
        if counts.contains(&0) {
            return Err(ModelError::Batch(String::from("graph without nodes")));
        }
        match &self.propagation {
            None => {
                if counts.iter().any(|&c| c != 1) {
                    return Err(ModelError::Batch(String::from("identity propagation needs single-node graphs")));
                }
            }
            Some(a) => {
                if a.shape() != [nodes, nodes] {
                    return Err(ModelError::Batch(format!("propagation shape {:?}", a.shape())));
                }
                for i in 0..nodes {
                    let row = &a.data()[i * nodes..(i + 1) * nodes];
                    let mut expected = 0.0;
                    let di = counts[self.membership[i]] as f64;
                    for (j, &v) in row.iter().enumerate() {
                        if self.membership[j] != self.membership[i] && v != 0.0 {
                            return Err(ModelError::Batch(format!("edge between graphs at ({i}, {j})")));
                        }
                        if self.membership[j] == self.membership[i] {
                            expected += 1.0 / math::sqrt(di * counts[self.membership[j]] as f64);
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - expected).abs() > 1e-12 {
                        return Err(ModelError::Batch(format!("row {i} sums to {sum}, expected {expected}")));
                    }
                }
            }
        }
        if let Some(p) = &self.pooling {
            if p.shape() != [self.n_graphs, nodes] {
                return Err(ModelError::Batch(format!("pooling shape {:?}", p.shape())));
            }
        } else if nodes != self.n_graphs {
            return Err(ModelError::Batch(String::from("identity pooling needs one node per graph")));
        }
        Ok(())
    }
}

/// Post-activation outputs of every layer: graph layers (node level), pool,
/// then dense layers (graph level).
struct Activations {
    graph: Vec<Var>,
    pooled: Var,
    dense: Vec<Var>,
}

fn run(tape: &mut Tape, params: &ParamVars, batch: &GraphBatch, features: Var) -> Result<Activations, ModelError> {
    let ng = params.arch.n_graph_layers();
    let prop = batch.propagation.as_ref().map(|a| tape.constant(a.clone()));
    let mut h = features;
    let mut graph = Vec::with_capacity(ng);
    for &(w, b) in &params.layers[..ng] {
        let mut z = tape.matmul(h, w)?;
        if let Some(a) = prop {
            z = tape.matmul(a, z)?;
        }
        let z = tape.add_broadcast(z, b)?;
        h = tape.mish(z)?;
        graph.push(h);
    }
    let pooled = match &batch.pooling {
        Some(p) => {
            let p = tape.constant(p.clone());
            tape.matmul(p, h)?
        }
        None => h,
    };
    let mut dense = Vec::with_capacity(params.layers.len() - ng);
    let mut h = pooled;
    for &(w, b) in &params.layers[ng..] {
        let z = tape.matmul(h, w)?;
        let z = tape.add_broadcast(z, b)?;
        h = tape.mish(z)?;
        dense.push(h);
    }
    Ok(Activations { graph, pooled, dense })
}

/// Predicted energy per graph, shape `n_graphs × 1`.
pub fn forward(tape: &mut Tape, params: &ParamVars, batch: &GraphBatch, features: Var) -> Result<Var, ModelError> {
    if tape.shape(features)? != batch.features.shape() {
        return Err(ModelError::Batch(format!(
            "feature variable has shape {:?}, batch expects {:?}",
            tape.shape(features)?,
            batch.features.shape()
        )));
    }
    let acts = run(tape, params, batch, features)?;
    Ok(*acts.dense.last().expect("at least one dense layer"))
}

/// Maps `∂H/∂(node features)` to the node-layout field `(∂H/∂p, -∂H/∂q)`.
pub fn symplectic_rearrange(tape: &mut Tape, grad: Var) -> Result<Var, AutodiffError> {
    let dq = tape.slice(grad, 1, 0, 2)?;
    let dp = tape.slice(grad, 1, 2, 2)?;
    let minus_dq = tape.neg(dq)?;
    tape.concat(&[dp, minus_dq], 1)
}

/// `J ∇ₓ H` for an arbitrary scalar-energy builder over node features.
///
/// `energy` receives the feature variable (`n_nodes × 4`) and returns any
/// tensor whose sum is the total energy. With `create_graph` the field stays
/// differentiable with respect to everything `energy` depends on.
pub fn symplectic_field_with(
    tape: &mut Tape,
    features: Var,
    create_graph: bool,
    energy: impl FnOnce(&mut Tape, Var) -> Result<Var, ModelError>,
) -> Result<Var, ModelError> {
    let h = energy(tape, features)?;
    let total = tape.sum(h)?;
    let grad = tape.gradient(total, &[features], create_graph)?[0];
    Ok(symplectic_rearrange(tape, grad)?)
}

/// Predicted field in node layout (`n_nodes × 4`, columns `q̇₁ q̇₂ ṗ₁ ṗ₂`).
pub fn symplectic_field(
    tape: &mut Tape,
    params: &ParamVars,
    batch: &GraphBatch,
    create_graph: bool,
) -> Result<Var, ModelError> {
    // a constant: replays keep each call's own point set
    let features = tape.constant(batch.features.clone());
    symplectic_field_with(tape, features, create_graph, |tape, x| forward(tape, params, batch, x))
}

/// Predicted `[q̇; ṗ]` for one flat state, detached from any tape.
pub fn predict_field(params: &ModelParams, system: System, state: &[f64]) -> Result<Vec<f64>, ModelError> {
    let batch = GraphBatch::from_states(system, [state])?;
    let mut tape = Tape::new();
    let pv = params.register_constant(&mut tape);
    let field = symplectic_field(&mut tape, &pv, &batch, false)?;
    Ok(system.from_node_rows(tape.value(field)?.data()))
}

/// Predicted energy for each state.
pub fn predict_energy<'a>(
    params: &ModelParams,
    system: System,
    states: impl IntoIterator<Item = &'a [f64]>,
) -> Result<Vec<f64>, ModelError> {
    let batch = GraphBatch::from_states(system, states)?;
    let mut tape = Tape::new();
    let pv = params.register_constant(&mut tape);
    let x = tape.constant(batch.features.clone());
    let h = forward(&mut tape, &pv, &batch, x)?;
    Ok(tape.value(h)?.data().to_vec())
}

/// Post-activation values at `layer`, one row per graph. Node-level layers are
/// mean-pooled over each graph's nodes.
pub fn layer_activations(params: &ModelParams, batch: &GraphBatch, layer: LayerId) -> Result<Tensor, ModelError> {
    let arch = &params.arch;
    let valid = match layer {
        LayerId::Graph(i) => i >= 1 && i <= arch.n_graph_layers(),
        LayerId::Pool => true,
        LayerId::Dense(i) => i >= 1 && i <= arch.n_dense_layers(),
    };
    if !valid {
        return Err(ModelError::UnknownLayer(format!("{layer}")));
    }
    let mut tape = Tape::new();
    let pv = params.register_constant(&mut tape);
    let x = tape.constant(batch.features.clone());
    let acts = run(&mut tape, &pv, batch, x)?;
    let var = match layer {
        LayerId::Graph(i) => {
            let h = acts.graph[i - 1];
            match &batch.pooling {
                Some(p) => {
                    let p = tape.constant(p.clone());
                    tape.matmul(p, h)?
                }
                None => h,
            }
        }
        LayerId::Pool => acts.pooled,
        LayerId::Dense(i) => acts.dense[i - 1],
    };
    Ok(tape.value(var)?.clone())
}
