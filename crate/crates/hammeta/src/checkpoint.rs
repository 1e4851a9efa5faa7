//! Model checkpoints: the flat parameter vector in the binary container, with
//! layer shapes and training provenance in the header.

use std::path::Path;

use hammeta_core::model::ModelParams;
use serde::{Deserialize, Serialize};

use crate::config::ArchSettings;
use crate::error::{Error, Result};
use crate::format::{self, Kind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub weight: [usize; 2],
    pub bias: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `metatrain` or `pretrain`.
    pub mode: String,
    pub scenario: String,
    pub seed: u64,
    /// Outer iterations completed when the checkpoint was written.
    pub iteration: usize,
    /// Manifest hashes of the datasets trained on.
    pub datasets: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: ArchSettings,
    pub layers: Vec<LayerShape>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Hash of the experiment manifest that produced it.
    pub manifest_sha256: String,
    pub provenance: Provenance,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Writes the checkpoint; returns the SHA-256 of the file bytes.
    pub fn save(&self, path: &Path) -> Result<String> {
        let arch = &self.params.arch;
        let layers = arch
            .layer_names()
            .into_iter()
            .zip(arch.layer_dims())
            .map(|(name, (i, o))| LayerShape { name, weight: [i, o], bias: o })
            .collect();
        let header = CheckpointHeader { architecture: arch.into(), layers, provenance: self.provenance.clone() };
        format::write_file(path, Kind::Checkpoint, &self.manifest_sha256, header, &self.params.flatten())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (env, flat) = format::read_file::<CheckpointHeader>(path, Kind::Checkpoint)?;
        let arch = env.header.architecture.to_core()?;
        let expected: Vec<[usize; 2]> = arch.layer_dims().into_iter().map(|(i, o)| [i, o]).collect();
        let got: Vec<[usize; 2]> = env.header.layers.iter().map(|l| l.weight).collect();
        if expected != got {
            return Err(Error::format(path, format!("layer shapes {got:?} do not match the architecture")));
        }
        let params = ModelParams::unflatten(&arch, &flat).map_err(|e| Error::format(path, e.to_string()))?;
        if !params.is_finite() {
            return Err(Error::format(path, "non-finite parameters"));
        }
        Ok(Self { manifest_sha256: env.manifest_sha256, provenance: env.header.provenance, params })
    }
}
