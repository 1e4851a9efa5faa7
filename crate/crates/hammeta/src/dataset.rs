//! Trajectory datasets on disk: `<root>/<system>/manifest.json` plus blocks
//! of trajectories in the binary container.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hammeta_core::integrator::IntegratorConfig;
use hammeta_core::physics::{self, System, Trajectory, TRAJECTORY_STEPS, T_END};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::IntegratorSettings;
use crate::error::{Error, Result};
use crate::format::{self, Kind, SCHEMA_VERSION};
use crate::parallel;

/// Maximum relative energy drift `max|H - H₀| / (|H₀| + 1)` a trajectory may show.
pub const ENERGY_TOLERANCE: f64 = 1e-4;
/// Failed integrations tolerated per trajectory before generation aborts.
pub const MAX_RESAMPLES: usize = 10;
pub const DEFAULT_BLOCK_SIZE: usize = 100;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything that determines the generated bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub system: String,
    pub n_trajectories: usize,
    pub steps: usize,
    pub t_span: [f64; 2],
    pub seed: u64,
    pub integrator: IntegratorSettings,
    pub momentum_noise: f64,
    pub constants: BTreeMap<String, f64>,
    pub max_resamples: usize,
    pub block_size: usize,
    pub conventions: Vec<String>,
    pub layout: String,
}

impl DatasetSpec {
    pub fn new(system: System, n_trajectories: usize, seed: u64) -> Self {
        Self::with_integrator(system, n_trajectories, seed, &IntegratorConfig::DATASET)
    }

    pub fn with_integrator(system: System, n_trajectories: usize, seed: u64, integrator: &IntegratorConfig) -> Self {
        Self {
            system: system.name().to_string(),
            n_trajectories,
            steps: TRAJECTORY_STEPS,
            t_span: [0.0, T_END],
            seed,
            integrator: integrator.into(),
            momentum_noise: system.default_noise(),
            constants: system.constants().iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            max_resamples: MAX_RESAMPLES,
            block_size: DEFAULT_BLOCK_SIZE,
            conventions: conventions(system),
            layout: "trajectory-major; each time row is t, state[q; p], d(state)/dt".to_string(),
        }
    }

    pub fn system(&self) -> Result<System> {
        self.system.parse().map_err(|e| Error::Usage(format!("{e}")))
    }

    pub fn hash(&self) -> String {
        format::canonical_hash(self)
    }
}

fn conventions(system: System) -> Vec<String> {
    let mut c = vec!["trajectory i draws from ChaCha8 seeded with seed + i".to_string()];
    match system {
        System::TwoBody => c.push("bodies at ±r on a circular orbit, counterclockwise; Gaussian momentum noise".into()),
        System::ThreeBody => {
            c.push("equilateral configuration rotating counterclockwise; Gaussian momentum noise".into());
            c.push(format!("proposals with a pair closer than {} are redrawn", physics::MIN_BODY_SEPARATION));
        }
        System::HenonHeiles => {
            c.push("orbits leaving radius 2 are redrawn without counting as failures".into());
        }
        _ => {}
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub file: String,
    pub first_index: usize,
    pub count: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCheck {
    pub tolerance: f64,
    pub passed: usize,
    pub failed: Vec<usize>,
    pub max_drift: f64,
    /// Per-trajectory drift, in trajectory order.
    pub drift: Vec<f64>,
}

impl EnergyCheck {
    pub fn all_passed(&self) -> bool {
        self.failed.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub kind: String,
    pub manifest_sha256: String,
    pub spec: DatasetSpec,
    pub blocks: Vec<BlockEntry>,
    pub energy_check: EnergyCheck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BlockHeader {
    system: String,
    first_index: usize,
    count: usize,
    steps: usize,
    state_dim: usize,
    /// `[count, steps, 1 + 2 * state_dim]`.
    shape: [usize; 3],
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub system: System,
    pub trajectories: Vec<Trajectory>,
}

pub fn system_dir(root: &Path, system: System) -> PathBuf {
    root.join(system.name())
}

pub fn exists(root: &Path, system: System) -> bool {
    system_dir(root, system).join(MANIFEST_FILE).is_file()
}

/// Generates trajectory `index`, resampling failed integrations.
pub fn generate_one(spec: &DatasetSpec, system: System, index: usize) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(index as u64));
    Trajectory::sample(system, &mut rng, &spec.integrator.to_core(), spec.max_resamples)
        .map_err(|source| Error::Generation { system, index, source })
}

/// Generates every trajectory of `spec` on `workers` threads. The output does
/// not depend on the worker count.
pub fn generate(spec: &DatasetSpec, workers: usize) -> Result<Vec<Trajectory>> {
    let system = spec.system()?;
    let results = parallel::map_indexed(spec.n_trajectories, workers, |i| generate_one(spec, system, i));
    results.into_iter().collect()
}

pub fn energy_check(trajectories: &[Trajectory], tolerance: f64) -> EnergyCheck {
    let drift: Vec<f64> =
        trajectories.iter().map(|t| t.energy_drift().unwrap_or(f64::INFINITY)).collect();
    let failed = drift.iter().enumerate().filter(|(_, d)| d.is_nan() || **d > tolerance).map(|(i, _)| i).collect::<Vec<_>>();
    EnergyCheck {
        tolerance,
        passed: drift.len() - failed.len(),
        failed,
        max_drift: drift.iter().copied().fold(0.0, f64::max),
        drift,
    }
}

/// Generates and writes a dataset under `root/<system>`; returns its manifest.
pub fn write(root: &Path, spec: &DatasetSpec, workers: usize) -> Result<DatasetManifest> {
    if spec.n_trajectories == 0 || spec.block_size == 0 {
        return Err(Error::Usage("trajectory count and block size must be positive".into()));
    }
    let system = spec.system()?;
    let trajectories = generate(spec, workers)?;
    let dir = system_dir(root, system);
    format::create_dir(&dir)?;
    let hash = spec.hash();
    let mut blocks = Vec::new();
    for (b, chunk) in trajectories.chunks(spec.block_size).enumerate() {
        let first_index = b * spec.block_size;
        let file = format!("block_{b:05}.bin");
        let d = system.state_dim();
        let mut payload = Vec::with_capacity(chunk.len() * spec.steps * (1 + 2 * d));
        for t in chunk {
            for i in 0..t.len() {
                payload.push(t.times[i]);
                payload.extend_from_slice(&t.states[i]);
                payload.extend_from_slice(&t.derivs[i]);
            }
        }
        let header = BlockHeader {
            system: spec.system.clone(),
            first_index,
            count: chunk.len(),
            steps: spec.steps,
            state_dim: d,
            shape: [chunk.len(), spec.steps, 1 + 2 * d],
        };
        let sha256 = format::write_file(&dir.join(&file), Kind::Dataset, &hash, header, &payload)?;
        blocks.push(BlockEntry { file, first_index, count: chunk.len(), sha256 });
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        kind: "dataset".into(),
        manifest_sha256: hash,
        spec: spec.clone(),
        blocks,
        energy_check: energy_check(&trajectories, ENERGY_TOLERANCE),
    };
    format::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Loads and verifies the dataset for `system` under `root`.
pub fn load(root: &Path, system: System) -> Result<Dataset> {
    let dir = system_dir(root, system);
    let path = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest = format::read_json(&path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::format(&path, format!("schema version {}", manifest.schema_version)));
    }
    if manifest.spec.system()? != system {
        return Err(Error::format(&path, format!("holds {}, expected {system}", manifest.spec.system)));
    }
    if manifest.spec.hash() != manifest.manifest_sha256 {
        return Err(Error::format(&path, "manifest hash does not match its spec"));
    }
    let d = system.state_dim();
    let row = 1 + 2 * d;
    let mut trajectories = Vec::with_capacity(manifest.spec.n_trajectories);
    for block in &manifest.blocks {
        let file = dir.join(&block.file);
        let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
        if format::sha256_hex(&bytes) != block.sha256 {
            return Err(Error::format(&file, "checksum mismatch"));
        }
        let (env, payload) = format::decode::<BlockHeader>(Kind::Dataset, &bytes, &file)?;
        if env.manifest_sha256 != manifest.manifest_sha256 {
            return Err(Error::format(&file, "block belongs to a different manifest"));
        }
        let h = env.header;
        if h.shape != [block.count, manifest.spec.steps, row] || payload.len() != h.shape.iter().product::<usize>() {
            return Err(Error::format(&file, format!("unexpected shape {:?}", h.shape)));
        }
        for traj in payload.chunks_exact(manifest.spec.steps * row) {
            let mut t = Trajectory { system, times: Vec::new(), states: Vec::new(), derivs: Vec::new() };
            for r in traj.chunks_exact(row) {
                t.times.push(r[0]);
                t.states.push(r[1..1 + d].to_vec());
                t.derivs.push(r[1 + d..].to_vec());
            }
            trajectories.push(t);
        }
    }
    if trajectories.len() != manifest.spec.n_trajectories {
        return Err(Error::format(&path, format!("{} trajectories on disk, manifest lists {}", trajectories.len(), manifest.spec.n_trajectories)));
    }
    Ok(Dataset { manifest, system, trajectories })
}

/// Loads every dataset in `systems`, or reports all missing ones at once.
pub fn load_all(root: &Path, systems: &[System]) -> Result<Vec<Dataset>> {
    let missing: Vec<System> = systems.iter().copied().filter(|&s| !exists(root, s)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingData { dir: root.to_path_buf(), required: systems.to_vec(), missing });
    }
    systems.iter().map(|&s| load(root, s)).collect()
}
