//! Held-out-system experiments: which systems meta-train each test system,
//! and their default hyperparameters.

use alloc::vec::Vec;

use crate::evaluation::default_adapt_lr;
use crate::physics::System;
use crate::training::MetaConfig;

/// Trajectories per system at desk scale.
pub const DESK_TRAJECTORIES: usize = 1000;
/// Desk-scale outer iterations are this fraction of the full-scale count.
pub const DESK_ITERATION_DIVISOR: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub test_system: System,
    pub train_systems: Vec<System>,
}

const SINGLE: [System; 4] = [System::MassSpring, System::Pendulum, System::HenonHeiles, System::MagneticMirror];

impl Scenario {
    /// Scenario named after its held-out test system.
    pub fn for_test_system(test_system: System) -> Self {
        let train_systems = match test_system {
            System::TwoBody | System::ThreeBody => SINGLE.to_vec(),
            s => SINGLE.iter().copied().filter(|&t| t != s).collect(),
        };
        Self { test_system, train_systems }
    }

    pub fn all() -> Vec<Self> {
        System::ALL.iter().map(|&s| Self::for_test_system(s)).collect()
    }

    pub fn name(&self) -> &'static str {
        self.test_system.name()
    }

    /// Outer iterations at full scale.
    pub fn full_outer_iterations(&self) -> usize {
        match self.test_system {
            System::MassSpring | System::Pendulum | System::TwoBody => 5000,
            System::HenonHeiles => 10_000,
            System::MagneticMirror | System::ThreeBody => 30_000,
        }
    }

    pub fn outer_lr(&self) -> f64 {
        match self.test_system {
            System::TwoBody | System::ThreeBody => 0.00005,
            _ => 0.0005,
        }
    }

    pub fn meta_config(&self, scale: Scale) -> MetaConfig {
        let full = self.full_outer_iterations();
        let outer_iterations = match scale {
            Scale::Full => full,
            Scale::Desk => full / DESK_ITERATION_DIVISOR,
        };
        MetaConfig { outer_lr: self.outer_lr(), outer_iterations, ..MetaConfig::default() }
    }

    /// Adam learning rate for adaptation on the test system.
    pub fn adapt_lr(&self) -> f64 {
        default_adapt_lr(self.test_system)
    }
}
