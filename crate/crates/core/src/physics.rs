//! The six Hamiltonian systems: closed-form energies, symplectic vector fields,
//! initial-condition samplers and graph encodings.
//!
//! States are flat `[q; p]` vectors. Every system embeds two coordinates and
//! two momenta per particle, so a state has `4 * n_particles` entries and the
//! coordinates of particle `i` sit at `q[2i], q[2i+1]`. All physical constants
//! (masses, spring constant, gravity, pendulum length, G, λ) are 1.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::integrator::{self, FieldError, IntegrationError, IntegratorConfig};
use crate::math;

/// Number of output samples per trajectory.
pub const TRAJECTORY_STEPS: usize = 200;
/// Integration interval `[0, T_END]`.
pub const T_END: f64 = 10.0;
/// Bodies closer than this reject an n-body initial condition.
pub const MIN_BODY_SEPARATION: f64 = 0.05;
/// Upper bound on initial-condition draws per sampled trajectory.
pub const MAX_PROPOSALS: usize = 100_000;
const SINGULAR_DISTANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum System {
    MassSpring,
    Pendulum,
    HenonHeiles,
    MagneticMirror,
    TwoBody,
    ThreeBody,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PhysicsError {
    #[error("{system} expects a state of length {expected}, got {got}")]
    Dimension { system: System, expected: usize, got: usize },
    #[error("bodies {i} and {j} coincide (distance {distance:e})")]
    Singularity { i: usize, j: usize, distance: f64 },
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error("no admissible initial condition after {attempts} attempts: {last}")]
    Resample { attempts: usize, last: String },
}

impl System {
    pub const ALL: [System; 6] = [
        System::MassSpring,
        System::Pendulum,
        System::HenonHeiles,
        System::MagneticMirror,
        System::TwoBody,
        System::ThreeBody,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::MassSpring => "mass-spring",
            System::Pendulum => "pendulum",
            System::HenonHeiles => "henon-heiles",
            System::MagneticMirror => "magnetic-mirror",
            System::TwoBody => "two-body",
            System::ThreeBody => "three-body",
        }
    }

    /// Radius beyond which an orbit is treated as escaped. Only Hénon-Heiles
    /// has one: above the saddle energy its cubic potential sends orbits to
    /// infinity in finite time.
    pub fn escape_radius(self) -> Option<f64> {
        match self {
            System::HenonHeiles => Some(2.0),
            _ => None,
        }
    }

    pub fn n_particles(self) -> usize {
        match self {
            System::TwoBody => 2,
            System::ThreeBody => 3,
            _ => 1,
        }
    }

    pub fn state_dim(self) -> usize {
        4 * self.n_particles()
    }

    /// Physical constants by symbol; every one of them is 1.
    pub fn constants(self) -> &'static [(&'static str, f64)] {
        match self {
            System::MassSpring => &[("m", 1.0), ("k", 1.0)],
            System::Pendulum => &[("m", 1.0), ("g", 1.0), ("l", 1.0)],
            System::HenonHeiles => &[("lambda", 1.0)],
            System::MagneticMirror => &[],
            System::TwoBody => &[("m1", 1.0), ("m2", 1.0), ("G", 1.0)],
            System::ThreeBody => &[("m1", 1.0), ("m2", 1.0), ("m3", 1.0), ("G", 1.0)],
        }
    }

    /// Gaussian momentum-noise multiplier applied by [`System::sample_initial`].
    pub fn default_noise(self) -> f64 {
        match self {
            System::TwoBody => 0.1,
            System::ThreeBody => 0.05,
            _ => 0.0,
        }
    }

    fn check_dim(self, x: &[f64]) -> Result<(), PhysicsError> {
        if x.len() != self.state_dim() {
            return Err(PhysicsError::Dimension { system: self, expected: self.state_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Closed-form energy of a flat `[q; p]` state.
    pub fn hamiltonian(self, x: &[f64]) -> Result<f64, PhysicsError> {
        self.check_dim(x)?;
        Ok(match self {
            System::MassSpring => {
                let (q, p) = (x[0], x[2]);
                0.5 * p * p + 0.5 * q * q
            }
            System::Pendulum => {
                let (theta, p) = (x[0], x[2]);
                0.5 * p * p + (1.0 - math::cos(theta))
            }
            System::HenonHeiles => {
                let (qx, qy, px, py) = (x[0], x[1], x[2], x[3]);
                0.5 * (px * px + py * py) + 0.5 * (qx * qx + qy * qy) + qx * qx * qy - qy * qy * qy / 3.0
            }
            System::MagneticMirror => {
                let (rho, z, pr, pz) = (x[0], x[1], x[2], x[3]);
                let (r2, z2) = (rho * rho, z * z);
                0.5 * (pr * pr + pz * pz) + 0.5 * r2 + 0.5 * r2 * z2 - r2 * r2 / 8.0 + r2 * z2 * z2 / 8.0
                    - r2 * r2 * z2 / 16.0
                    + r2 * r2 * r2 / 128.0
            }
            System::TwoBody | System::ThreeBody => {
                let n = self.n_particles();
                let kinetic: f64 = x[2 * n..].iter().map(|p| 0.5 * p * p).sum();
                let mut potential = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        potential -= 1.0 / separation(x, i, j)?;
                    }
                }
                kinetic + potential
            }
        })
    }

    /// Hand-derived `(∂H/∂p, -∂H/∂q)` written into `out` in `[q̇; ṗ]` layout.
    pub fn analytic_field(self, x: &[f64], out: &mut [f64]) -> Result<(), PhysicsError> {
        self.check_dim(x)?;
        self.check_dim(out)?;
        match self {
            System::MassSpring => {
                out.copy_from_slice(&[x[2], 0.0, -x[0], 0.0]);
            }
            System::Pendulum => {
                out.copy_from_slice(&[x[2], 0.0, -math::sin(x[0]), 0.0]);
            }
            System::HenonHeiles => {
                let (qx, qy) = (x[0], x[1]);
                out.copy_from_slice(&[x[2], x[3], -(qx + 2.0 * qx * qy), -(qy + qx * qx - qy * qy)]);
            }
            System::MagneticMirror => {
                let (rho, z) = (x[0], x[1]);
                let (r2, z2) = (rho * rho, z * z);
                let dh_drho = rho + rho * z2 - 0.5 * r2 * rho + 0.25 * rho * z2 * z2 - 0.25 * r2 * rho * z2
                    + 3.0 / 64.0 * r2 * r2 * rho;
                let dh_dz = r2 * z + 0.5 * r2 * z2 * z - r2 * r2 * z / 8.0;
                out.copy_from_slice(&[x[2], x[3], -dh_drho, -dh_dz]);
            }
            System::TwoBody | System::ThreeBody => {
                let n = self.n_particles();
                out[..2 * n].copy_from_slice(&x[2 * n..]);
                out[2 * n..].iter_mut().for_each(|v| *v = 0.0);
                for i in 0..n {
                    for j in i + 1..n {
                        let d = separation(x, i, j)?;
                        let inv3 = 1.0 / (d * d * d);
                        for c in 0..2 {
                            // force on i points toward j
                            let f = (x[2 * j + c] - x[2 * i + c]) * inv3;
                            out[2 * n + 2 * i + c] += f;
                            out[2 * n + 2 * j + c] -= f;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn field(self, x: &[f64]) -> Result<Vec<f64>, PhysicsError> {
        let mut out = vec![0.0; x.len()];
        self.analytic_field(x, &mut out)?;
        Ok(out)
    }

    /// The energy built from tape primitives, for differentiation.
    ///
    /// `x` must be a flat state of shape `[state_dim]`; the result is a scalar.
    pub fn hamiltonian_expr(self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let comp = |tape: &mut Tape, i: usize| tape.slice(x, 0, i, 1);
        let half_sq = |tape: &mut Tape, v: Var| -> Result<Var, AutodiffError> {
            let s = tape.mul(v, v)?;
            tape.scale(s, 0.5)
        };
        let h = match self {
            System::MassSpring => {
                let (q, p) = (comp(tape, 0)?, comp(tape, 2)?);
                let a = half_sq(tape, p)?;
                let b = half_sq(tape, q)?;
                tape.add(a, b)?
            }
            System::Pendulum => {
                let (theta, p) = (comp(tape, 0)?, comp(tape, 2)?);
                let kinetic = half_sq(tape, p)?;
                let one = tape.constant(Tensor::vector(vec![1.0]));
                let c = tape.cos(theta)?;
                let potential = tape.sub(one, c)?;
                tape.add(kinetic, potential)?
            }
            System::HenonHeiles => {
                let kinetic_and_harmonic = half_sq(tape, x)?;
                let quad = tape.sum(kinetic_and_harmonic)?;
                let (qx, qy) = (comp(tape, 0)?, comp(tape, 1)?);
                let xx = tape.mul(qx, qx)?;
                let xxy = tape.mul(xx, qy)?;
                let yy = tape.mul(qy, qy)?;
                let yyy = tape.mul(yy, qy)?;
                let cubic = tape.scale(yyy, 1.0 / 3.0)?;
                let coupling = tape.sub(xxy, cubic)?;
                let coupling = tape.sum(coupling)?;
                tape.add(quad, coupling)?
            }
            System::MagneticMirror => {
                let (rho, z, pr, pz) = (comp(tape, 0)?, comp(tape, 1)?, comp(tape, 2)?, comp(tape, 3)?);
                let a = half_sq(tape, pr)?;
                let b = half_sq(tape, pz)?;
                let r2 = tape.mul(rho, rho)?;
                let z2 = tape.mul(z, z)?;
                let r4 = tape.mul(r2, r2)?;
                let z4 = tape.mul(z2, z2)?;
                let r6 = tape.mul(r4, r2)?;
                let r2z2 = tape.mul(r2, z2)?;
                let r2z4 = tape.mul(r2, z4)?;
                let r4z2 = tape.mul(r4, z2)?;
                let terms = [
                    a,
                    b,
                    tape.scale(r2, 0.5)?,
                    tape.scale(r2z2, 0.5)?,
                    tape.scale(r4, -1.0 / 8.0)?,
                    tape.scale(r2z4, 1.0 / 8.0)?,
                    tape.scale(r4z2, -1.0 / 16.0)?,
                    tape.scale(r6, 1.0 / 128.0)?,
                ];
                let mut acc = terms[0];
                for &t in &terms[1..] {
                    acc = tape.add(acc, t)?;
                }
                acc
            }
            System::TwoBody | System::ThreeBody => {
                let n = self.n_particles();
                let p = tape.slice(x, 0, 2 * n, 2 * n)?;
                let kin = half_sq(tape, p)?;
                let mut acc = tape.sum(kin)?;
                for i in 0..n {
                    for j in i + 1..n {
                        let ri = tape.slice(x, 0, 2 * i, 2)?;
                        let rj = tape.slice(x, 0, 2 * j, 2)?;
                        let d = tape.sub(ri, rj)?;
                        let dd = tape.mul(d, d)?;
                        let r2 = tape.sum(dd)?;
                        // -1/|d| = -exp(-½ ln |d|²)
                        let l = tape.log(r2)?;
                        let l = tape.scale(l, -0.5)?;
                        let inv = tape.exp(l)?;
                        acc = tape.sub(acc, inv)?;
                    }
                }
                acc
            }
        };
        tape.sum(h)
    }

    /// Initial condition with the system's default momentum noise.
    pub fn sample_initial<R: Rng + ?Sized>(self, rng: &mut R) -> PhasePoint {
        self.sample_initial_with_noise(rng, self.default_noise())
    }

    /// Initial condition with an explicit Gaussian noise multiplier on n-body
    /// momenta (ignored for single-particle systems).
    pub fn sample_initial_with_noise<R: Rng + ?Sized>(self, rng: &mut R, noise: f64) -> PhasePoint {
        let state = match self {
            System::MassSpring => {
                let q = rng.random_range(-1.0..=1.0);
                let p = rng.random_range(-1.0..=1.0);
                vec![q, 0.0, p, 0.0]
            }
            System::Pendulum => {
                let theta = rng.random_range(-PI / 2.0..=PI / 2.0);
                let p = rng.random_range(-1.0..=1.0);
                vec![theta, 1.0, p, 0.0]
            }
            System::HenonHeiles | System::MagneticMirror => {
                (0..4).map(|_| rng.random_range(-1.0..=1.0)).collect()
            }
            System::TwoBody => {
                let r1 = [rng.random_range(0.5..=1.5), rng.random_range(0.5..=1.5)];
                let radius = math::sqrt(r1[0] * r1[0] + r1[1] * r1[1]);
                // bodies at ±r: gravity 1/(2|r|)² balances v²/|r|
                let speed = 1.0 / (2.0 * math::sqrt(radius));
                let p1 = [-speed * r1[1] / radius, speed * r1[0] / radius];
                let mut x = vec![r1[0], r1[1], -r1[0], -r1[1], p1[0], p1[1], -p1[0], -p1[1]];
                add_momentum_noise(rng, &mut x[4..], noise);
                x
            }
            System::ThreeBody => {
                let r1 = [rng.random_range(0.8..=1.2), rng.random_range(0.8..=1.2)];
                let radius = math::sqrt(r1[0] * r1[0] + r1[1] * r1[1]);
                // equilateral Lagrange configuration
                let speed = math::powf(3.0, -0.25) / math::sqrt(radius);
                let p1 = [-speed * r1[1] / radius, speed * r1[0] / radius];
                let r2 = rotate(r1, 2.0 * PI / 3.0);
                let r3 = rotate(r2, 2.0 * PI / 3.0);
                let p2 = rotate(p1, 2.0 * PI / 3.0);
                let p3 = rotate(p2, 2.0 * PI / 3.0);
                let mut x = vec![r1[0], r1[1], r2[0], r2[1], r3[0], r3[1], p1[0], p1[1], p2[0], p2[1], p3[0], p3[1]];
                add_momentum_noise(rng, &mut x[6..], noise);
                x
            }
        };
        PhasePoint::from_state(0.0, &state)
    }

    /// Graph encoding of a state: one node per particle with features
    /// `(q_i1, q_i2, p_i1, p_i2)` and the symmetrically normalized adjacency
    /// `D^-1/2 (A + I) D^-1/2` of the complete graph with self-loops.
    pub fn to_graph(self, x: &[f64]) -> Result<GraphInput, PhysicsError> {
        self.check_dim(x)?;
        let n = self.n_particles();
        let mut features = Vec::with_capacity(4 * n);
        for i in 0..n {
            features.extend_from_slice(&[x[2 * i], x[2 * i + 1], x[2 * n + 2 * i], x[2 * n + 2 * i + 1]]);
        }
        Ok(GraphInput { features, adjacency: normalized_adjacency(n), n_nodes: n })
    }

    /// Inverse of the node layout used by [`System::to_graph`].
    pub fn from_node_rows(self, rows: &[f64]) -> Vec<f64> {
        let n = self.n_particles();
        let mut x = vec![0.0; 4 * n];
        for i in 0..n {
            x[2 * i] = rows[4 * i];
            x[2 * i + 1] = rows[4 * i + 1];
            x[2 * n + 2 * i] = rows[4 * i + 2];
            x[2 * n + 2 * i + 1] = rows[4 * i + 3];
        }
        x
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for System {
    type Err = PhysicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        let norm = norm.replace("hénon", "henon").replace("hnon", "henon");
        System::ALL
            .into_iter()
            .find(|sys| sys.name() == norm)
            .ok_or_else(|| PhysicsError::UnknownSystem(String::from(s)))
    }
}

fn separation(x: &[f64], i: usize, j: usize) -> Result<f64, PhysicsError> {
    let dx = x[2 * i] - x[2 * j];
    let dy = x[2 * i + 1] - x[2 * j + 1];
    let d = math::sqrt(dx * dx + dy * dy);
    if d < SINGULAR_DISTANCE {
        return Err(PhysicsError::Singularity { i, j, distance: d });
    }
    Ok(d)
}

fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = (math::sin(angle), math::cos(angle));
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn add_momentum_noise<R: Rng + ?Sized>(rng: &mut R, momenta: &mut [f64], noise: f64) {
    if noise == 0.0 {
        return;
    }
    for p in momenta {
        let z: f64 = rng.sample(StandardNormal);
        *p += noise * z;
    }
}

/// `D^-1/2 (A + I) D^-1/2` for the complete graph on `n` nodes, row-major.
pub fn normalized_adjacency(n: usize) -> Vec<f64> {
    let a_hat = vec![1.0; n * n];
    let degree: Vec<f64> = (0..n).map(|i| a_hat[i * n..(i + 1) * n].iter().sum()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = a_hat[i * n + j] / (math::sqrt(degree[i]) * math::sqrt(degree[j]));
        }
    }
    out
}

/// Node features (`n_nodes × 4`, row-major) and normalized adjacency
/// (`n_nodes × n_nodes`) of a single state.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput {
    pub features: Vec<f64>,
    pub adjacency: Vec<f64>,
    pub n_nodes: usize,
}

/// Canonical state at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn from_state(t: f64, x: &[f64]) -> Self {
        let half = x.len() / 2;
        Self { t, q: x[..half].to_vec(), p: x[half..].to_vec() }
    }

    pub fn state(&self) -> Vec<f64> {
        let mut x = self.q.clone();
        x.extend_from_slice(&self.p);
        x
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|v| v.is_finite()) && self.t.is_finite()
    }
}

/// Uniform output grid `[0, T_END]` with [`TRAJECTORY_STEPS`] samples.
pub fn default_times() -> Vec<f64> {
    linspace(0.0, T_END, TRAJECTORY_STEPS)
}

pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n).map(|i| start + (end - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Sampled states with their ground-truth time derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub system: System,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub derivs: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Integrates the analytic field from `x0` and attaches exact derivatives.
    pub fn generate(
        system: System,
        x0: &[f64],
        times: &[f64],
        cfg: &IntegratorConfig,
    ) -> Result<Self, PhysicsError> {
        system.check_dim(x0)?;
        let mut field = |_t: f64, y: &[f64], dy: &mut [f64]| {
            system.analytic_field(y, dy).map_err(|e| FieldError(alloc::format!("{e}")))
        };
        let sol = integrator::integrate(&mut field, x0, times, cfg)?;
        let derivs = sol.states.iter().map(|s| system.field(s)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { system, times: sol.times, states: sol.states, derivs })
    }

    /// Samples initial conditions until one integrates cleanly and, for n-body
    /// systems, keeps every pair of bodies at least [`MIN_BODY_SEPARATION`] apart.
    ///
    /// For systems with an [`escape radius`](System::escape_radius), proposals
    /// whose orbit leaves it (including ones that blow up) are redrawn without
    /// counting against `max_attempts`, up to [`MAX_PROPOSALS`] draws.
    pub fn sample<R: Rng + ?Sized>(
        system: System,
        rng: &mut R,
        cfg: &IntegratorConfig,
        max_attempts: usize,
    ) -> Result<Self, PhysicsError> {
        let times = default_times();
        let max_attempts = max_attempts.max(1);
        let mut last = String::new();
        let mut failures = 0;
        for _ in 0..MAX_PROPOSALS {
            let x0 = system.sample_initial(rng).state();
            let result = Self::generate(system, &x0, &times, cfg);
            if let Some(radius) = system.escape_radius() {
                let bound = matches!(&result, Ok(t) if t.max_radius() <= radius);
                if !bound {
                    last = alloc::format!("orbit left radius {radius}");
                    continue;
                }
            }
            match result {
                Ok(traj) if traj.min_separation() >= MIN_BODY_SEPARATION => return Ok(traj),
                Ok(_) => last = alloc::format!("bodies closer than {MIN_BODY_SEPARATION}"),
                Err(e) => last = alloc::format!("{e}"),
            }
            failures += 1;
            if failures >= max_attempts {
                break;
            }
        }
        Err(PhysicsError::Resample { attempts: failures.max(1), last })
    }

    /// Largest particle distance from the origin along the trajectory.
    pub fn max_radius(&self) -> f64 {
        let n = self.system.n_particles();
        self.states
            .iter()
            .flat_map(|s| (0..n).map(move |i| math::sqrt(s[2 * i] * s[2 * i] + s[2 * i + 1] * s[2 * i + 1])))
            .fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn point(&self, i: usize) -> PhasePoint {
        PhasePoint::from_state(self.times[i], &self.states[i])
    }

    pub fn energies(&self) -> Result<Vec<f64>, PhysicsError> {
        self.states.iter().map(|s| self.system.hamiltonian(s)).collect()
    }

    /// `max_t |H(t) - H(0)| / (|H(0)| + 1)`.
    pub fn energy_drift(&self) -> Result<f64, PhysicsError> {
        let e = self.energies()?;
        let Some(&e0) = e.first() else { return Ok(0.0) };
        Ok(e.iter().map(|v| (v - e0).abs()).fold(0.0, f64::max) / (e0.abs() + 1.0))
    }

    /// Smallest pairwise body distance along the trajectory (infinite for
    /// single-particle systems).
    pub fn min_separation(&self) -> f64 {
        let n = self.system.n_particles();
        let mut best = f64::INFINITY;
        for s in &self.states {
            for i in 0..n {
                for j in i + 1..n {
                    let dx = s[2 * i] - s[2 * j];
                    let dy = s[2 * i + 1] - s[2 * j + 1];
                    best = best.min(math::sqrt(dx * dx + dy * dy));
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hamiltonian_closed_forms() {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-14;
        assert!(close(System::MassSpring.hamiltonian(&[1.0, 0.0, 1.0, 0.0]).unwrap(), 1.0));
        assert!(close(System::Pendulum.hamiltonian(&[PI / 2.0, 1.0, 1.0, 0.0]).unwrap(), 1.5));
        assert!(close(System::HenonHeiles.hamiltonian(&[0.0, 1.0, 0.0, 0.0]).unwrap(), 1.0 / 6.0));
        assert!(close(System::MagneticMirror.hamiltonian(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.3828125));
        let two = [1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(close(System::TwoBody.hamiltonian(&two).unwrap(), -0.5));
    }

    #[test]
    fn analytic_field_examples() {
        assert_eq!(System::MassSpring.field(&[1.0, 0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, -1.0, 0.0]);
        assert_eq!(System::Pendulum.field(&[0.0, 1.0, 1.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn coincident_bodies_are_singular() {
        let x = [0.3, 0.3, 0.3, 0.3, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(System::TwoBody.hamiltonian(&x), Err(PhysicsError::Singularity { .. })));
        let mut out = [0.0; 8];
        assert!(matches!(System::TwoBody.analytic_field(&x, &mut out), Err(PhysicsError::Singularity { .. })));
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        assert!(matches!(System::ThreeBody.hamiltonian(&[0.0; 4]), Err(PhysicsError::Dimension { .. })));
    }

    #[test]
    fn redundant_coordinates_are_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let ms = System::MassSpring.sample_initial(&mut rng);
            assert_eq!((ms.q[1], ms.p[1]), (0.0, 0.0));
            let pd = System::Pendulum.sample_initial(&mut rng);
            assert_eq!((pd.q[1], pd.p[1]), (1.0, 0.0));
        }
    }

    #[test]
    fn graph_adjacency_entries() {
        let g1 = System::MassSpring.to_graph(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(g1.adjacency, vec![1.0]);
        assert_eq!(g1.features, vec![1.0, 2.0, 3.0, 4.0]);
        let g2 = System::TwoBody.to_graph(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert!(g2.adjacency.iter().all(|&a| (a - 0.5).abs() < 1e-15));
        assert_eq!(g2.features, vec![1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        let g3 = System::ThreeBody.to_graph(&[0.5; 12]).unwrap();
        assert!(g3.adjacency.iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn node_rows_round_trip() {
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let g = System::ThreeBody.to_graph(&x).unwrap();
        assert_eq!(System::ThreeBody.from_node_rows(&g.features), x);
    }

    #[test]
    fn system_names_parse() {
        for s in System::ALL {
            assert_eq!(s.name().parse::<System>().unwrap(), s);
        }
        assert_eq!("Hénon-Heiles".parse::<System>().unwrap(), System::HenonHeiles);
        assert_eq!("two_body".parse::<System>().unwrap(), System::TwoBody);
        assert!("double-pendulum".parse::<System>().is_err());
    }
}
