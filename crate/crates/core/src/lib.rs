//! Core numerics for meta-learning Hamiltonian dynamics across physical systems.
//!
//! A graph-convolutional network predicts a scalar energy; its symplectic
//! gradient is the predicted vector field. MAML trains the network across a
//! distribution of systems so a few gradient steps adapt it to an unseen one.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and
//! experiment orchestration live in the companion `hammeta` crate.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod autodiff;
pub mod evaluation;
pub mod integrator;
pub mod math;
pub mod model;
pub mod physics;
pub mod scenario;
pub mod training;

pub use autodiff::{AutodiffError, Tape, Tensor, Var};
pub use physics::{PhasePoint, System, Trajectory};
