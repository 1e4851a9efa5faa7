//! Serializable settings. Scenario defaults are resolved first, then a JSON
//! override file, then command-line flags; the result is printed at startup
//! and hashed into the experiment manifest.

use std::path::Path;

use hammeta_core::integrator::IntegratorConfig;
use hammeta_core::model::Architecture;
use hammeta_core::scenario::{Scale, Scenario};
use hammeta_core::training::{LossKind, MetaConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl From<&IntegratorConfig> for IntegratorSettings {
    fn from(c: &IntegratorConfig) -> Self {
        Self { rtol: c.rtol, atol: c.atol, max_steps: c.max_steps }
    }
}

impl IntegratorSettings {
    pub fn to_core(&self) -> IntegratorConfig {
        IntegratorConfig { rtol: self.rtol, atol: self.atol, max_steps: self.max_steps, initial_step: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSettings {
    pub graph_widths: Vec<usize>,
    pub dense_widths: Vec<usize>,
}

impl From<&Architecture> for ArchSettings {
    fn from(a: &Architecture) -> Self {
        Self { graph_widths: a.graph_widths.clone(), dense_widths: a.dense_widths.clone() }
    }
}

impl ArchSettings {
    pub fn to_core(&self) -> Result<Architecture> {
        let arch = Architecture { graph_widths: self.graph_widths.clone(), dense_widths: self.dense_widths.clone() };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaSettings {
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub inner_steps: usize,
    pub outer_iterations: usize,
    pub task_batch_size: usize,
    pub k_points: usize,
    pub first_order: bool,
    pub loss: String,
    pub disjoint_query: bool,
}

impl From<&MetaConfig> for MetaSettings {
    fn from(c: &MetaConfig) -> Self {
        Self {
            inner_lr: c.inner_lr,
            outer_lr: c.outer_lr,
            inner_steps: c.inner_steps,
            outer_iterations: c.outer_iterations,
            task_batch_size: c.task_batch_size,
            k_points: c.k_points,
            first_order: c.first_order,
            loss: c.loss.name().to_string(),
            disjoint_query: c.disjoint_query,
        }
    }
}

impl MetaSettings {
    pub fn to_core(&self) -> Result<MetaConfig> {
        let loss: LossKind = self.loss.parse().map_err(|e| Error::Usage(format!("{e}")))?;
        let cfg = MetaConfig {
            inner_lr: self.inner_lr,
            outer_lr: self.outer_lr,
            inner_steps: self.inner_steps,
            outer_iterations: self.outer_iterations,
            task_batch_size: self.task_batch_size,
            k_points: self.k_points,
            first_order: self.first_order,
            loss,
            disjoint_query: self.disjoint_query,
        };
        cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Partial training settings: any field left out keeps its default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub inner_lr: Option<f64>,
    pub outer_lr: Option<f64>,
    pub inner_steps: Option<usize>,
    pub outer_iterations: Option<usize>,
    pub task_batch_size: Option<usize>,
    pub k_points: Option<usize>,
    pub first_order: Option<bool>,
    pub loss: Option<String>,
    pub disjoint_query: Option<bool>,
    pub hidden: Option<usize>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<usize>,
    pub full_scale: Option<bool>,
}

impl TrainOverrides {
    pub fn from_file(path: &Path) -> Result<Self> {
        format::read_json(path)
    }

    /// Fields set in `other` replace those in `self`.
    pub fn merge(self, other: TrainOverrides) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { Self { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            inner_lr, outer_lr, inner_steps, outer_iterations, task_batch_size, k_points, first_order, loss,
            disjoint_query, hidden, seed, checkpoint_every, full_scale
        )
    }
}

/// Fully resolved training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub scenario: String,
    pub train_systems: Vec<String>,
    pub scale: String,
    pub meta: MetaSettings,
    pub architecture: ArchSettings,
    pub seed: u64,
    pub checkpoint_every: usize,
}

pub const DEFAULT_CHECKPOINT_EVERY: usize = 100;

impl TrainSettings {
    pub fn resolve(scenario: &Scenario, overrides: &TrainOverrides) -> Result<Self> {
        let scale = if overrides.full_scale.unwrap_or(false) { Scale::Full } else { Scale::Desk };
        let mut meta = MetaSettings::from(&scenario.meta_config(scale));
        let o = overrides;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = o.$f.clone() { meta.$f = v; })* };
        }
        set!(inner_lr, outer_lr, inner_steps, outer_iterations, task_batch_size, k_points, first_order, loss, disjoint_query);
        meta.to_core()?;
        let arch = match o.hidden {
            Some(h) => Architecture::with_hidden(h),
            None => Architecture::default(),
        };
        let checkpoint_every = o.checkpoint_every.unwrap_or(DEFAULT_CHECKPOINT_EVERY);
        if checkpoint_every == 0 {
            return Err(Error::Usage("checkpoint interval must be positive".into()));
        }
        Ok(Self {
            scenario: scenario.name().to_string(),
            train_systems: scenario.train_systems.iter().map(|s| s.name().to_string()).collect(),
            scale: match scale {
                Scale::Desk => "desk",
                Scale::Full => "full",
            }
            .to_string(),
            meta,
            architecture: ArchSettings::from(&arch),
            seed: o.seed.unwrap_or(0),
            checkpoint_every,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hammeta_core::physics::System;

    #[test]
    fn defaults_follow_scenario() {
        let s = TrainSettings::resolve(&Scenario::for_test_system(System::TwoBody), &TrainOverrides::default()).unwrap();
        assert_eq!(s.meta.outer_lr, 0.00005);
        assert_eq!(s.meta.outer_iterations, 500);
        assert_eq!(s.meta.k_points, 50);
        assert_eq!(s.architecture.graph_widths, vec![4, 200, 200, 4]);
        assert_eq!(s.train_systems.len(), 4);
    }

    #[test]
    fn later_overrides_win() {
        let file = TrainOverrides { k_points: Some(20), seed: Some(3), ..Default::default() };
        let flags = TrainOverrides { seed: Some(9), ..Default::default() };
        let merged = file.merge(flags);
        assert_eq!((merged.k_points, merged.seed), (Some(20), Some(9)));
        let s = TrainSettings::resolve(&Scenario::for_test_system(System::Pendulum), &merged).unwrap();
        assert_eq!((s.meta.k_points, s.seed), (20, 9));
    }

    #[test]
    fn invalid_overrides_are_usage_errors() {
        let o = TrainOverrides { k_points: Some(500), ..Default::default() };
        assert!(matches!(TrainSettings::resolve(&Scenario::for_test_system(System::Pendulum), &o), Err(Error::Usage(_))));
        let o = TrainOverrides { loss: Some("mse".into()), ..Default::default() };
        assert!(TrainSettings::resolve(&Scenario::for_test_system(System::Pendulum), &o).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<TrainOverrides>(r#"{"inner_lr": 0.1, "typo": 1}"#).is_err());
        let o: TrainOverrides = serde_json::from_str(r#"{"inner_lr": 0.1}"#).unwrap();
        assert_eq!(o.inner_lr, Some(0.1));
    }
}
