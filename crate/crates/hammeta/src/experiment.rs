//! Training, adaptation-evaluation and CKA runs over on-disk datasets.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use hammeta_core::evaluation::{
    cka_adaptation_curve, evaluate_seed, probe_states, AdaptConfig, EvalPlan, EvalReport,
};
use hammeta_core::model::{Architecture, GraphBatch, LayerId, ModelParams};
use hammeta_core::physics::{System, Trajectory};
use hammeta_core::scenario::Scenario;
use hammeta_core::training::{PointSet, TaskPool, Trainer, TrainingMode};
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Provenance};
use crate::config::TrainSettings;
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::format::{self, SCHEMA_VERSION};
use crate::parallel;
use crate::report::{self, CkaCurve, CkaSummary, EvalSummary, LogRow};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAINING_LOG_FILE: &str = "training_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const EVAL_CSV_FILE: &str = "errors.csv";
pub const EVAL_SUMMARY_FILE: &str = "summary.json";
pub const CKA_CSV_FILE: &str = "cka.csv";
pub const CKA_SUMMARY_FILE: &str = "cka_summary.json";

/// Support points per evaluation task.
pub const EVAL_K_POINTS: usize = 50;
/// States in the CKA probe batch.
pub const PROBE_SIZE: usize = 256;

/// Offset separating the task-sampling stream from the initialization stream.
const SAMPLING_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// What a run did, how, and from which inputs. The hash covers all three.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub command: String,
    pub settings: serde_json::Value,
    /// Input artifact name to its hash (dataset manifests, checkpoint files).
    pub inputs: BTreeMap<String, String>,
    pub manifest_sha256: String,
}

impl ExperimentManifest {
    pub fn new<S: Serialize>(command: &str, settings: &S, inputs: BTreeMap<String, String>) -> Self {
        let settings = serde_json::to_value(settings).expect("serializable settings");
        let manifest_sha256 = format::canonical_hash(&(command, &settings, &inputs));
        Self { schema_version: SCHEMA_VERSION, command: command.to_string(), settings, inputs, manifest_sha256 }
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        format::create_dir(out_dir)?;
        format::write_json(&out_dir.join(MANIFEST_FILE), self)
    }
}

fn dataset_inputs(datasets: &[Dataset]) -> BTreeMap<String, String> {
    datasets.iter().map(|d| (format!("dataset:{}", d.system), d.manifest.manifest_sha256.clone())).collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub manifest: ExperimentManifest,
    pub final_checkpoint: PathBuf,
    pub log: Vec<LogRow>,
}

/// Meta-trains or pre-trains on the scenario's training systems, writing the
/// manifest, a per-iteration log and periodic checkpoints to `out_dir`.
pub fn train(
    settings: &TrainSettings,
    mode: TrainingMode,
    data_dir: &Path,
    out_dir: &Path,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    let systems = settings
        .train_systems
        .iter()
        .map(|s| s.parse::<System>().map_err(|e| Error::Usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let test_system: System = settings.scenario.parse().map_err(|e: hammeta_core::physics::PhysicsError| Error::Usage(e.to_string()))?;
    if systems.contains(&test_system) {
        return Err(Error::Usage(format!("{test_system} is held out and cannot be trained on")));
    }
    let datasets = dataset::load_all(data_dir, &systems)?;
    let cfg = settings.meta.to_core()?;
    let arch = settings.architecture.to_core()?;

    let manifest = ExperimentManifest::new(mode.name(), settings, dataset_inputs(&datasets));
    manifest.write(out_dir)?;
    let provenance = |iteration| Provenance {
        mode: mode.name().to_string(),
        scenario: settings.scenario.clone(),
        seed: settings.seed,
        iteration,
        datasets: datasets.iter().map(|d| d.manifest.manifest_sha256.clone()).collect(),
    };

    let mut pool = TaskPool::new();
    for d in &datasets {
        pool.add(d.system, &d.trajectories);
    }
    let params = ModelParams::init(&arch, settings.seed)?;
    let mut trainer = Trainer::new(params, cfg, mode, settings.seed.wrapping_add(SAMPLING_STREAM))?;

    let log_path = out_dir.join(TRAINING_LOG_FILE);
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log_file = BufWriter::new(file);
    let io = |e| Error::io(&log_path, e);
    writeln!(log_file, "{}{}", format::csv_preamble(&manifest.manifest_sha256), report::TRAINING_LOG_HEADER).map_err(io)?;

    let start = Instant::now();
    let mut log = Vec::with_capacity(trainer.cfg.outer_iterations);
    while !trainer.is_done() {
        let step = trainer.step(&pool);
        let stats = match step {
            Ok(s) => s,
            Err(e) => {
                log_file.flush().map_err(io)?;
                return Err(e.into());
            }
        };
        let row = LogRow {
            iteration: trainer.iteration,
            mean_inner_pre_loss: stats.inner_loss,
            mean_outer_loss: stats.outer_loss,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log_file.write_all(row.to_csv().as_bytes()).map_err(io)?;
        on_row(&row);
        log.push(row);
        if trainer.iteration % settings.checkpoint_every == 0 && !trainer.is_done() {
            log_file.flush().map_err(io)?;
            let ckpt = Checkpoint { manifest_sha256: manifest.manifest_sha256.clone(), provenance: provenance(trainer.iteration), params: trainer.params.clone() };
            ckpt.save(&out_dir.join(format!("iter_{:06}.ckpt", trainer.iteration)))?;
        }
    }
    log_file.flush().map_err(io)?;
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    let ckpt = Checkpoint { manifest_sha256: manifest.manifest_sha256.clone(), provenance: provenance(trainer.iteration), params: trainer.params };
    ckpt.save(&final_checkpoint)?;
    Ok(TrainOutcome { manifest, final_checkpoint, log })
}

/// Initial parameters for adaptation.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSource {
    /// Fresh initialization with the seed of each evaluation run.
    Scratch(Architecture),
    Checkpoint(PathBuf),
}

impl ModelSource {
    /// `scratch` or a checkpoint path.
    pub fn parse(s: &str, scratch_arch: Architecture) -> Self {
        if s == "scratch" {
            ModelSource::Scratch(scratch_arch)
        } else {
            ModelSource::Checkpoint(PathBuf::from(s))
        }
    }

    fn resolve(&self) -> Result<(Option<ModelParams>, String, BTreeMap<String, String>)> {
        match self {
            ModelSource::Scratch(arch) => {
                arch.validate()?;
                Ok((None, "scratch".into(), BTreeMap::new()))
            }
            ModelSource::Checkpoint(path) => {
                let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                let ckpt = Checkpoint::load(path)?;
                let label = format!("checkpoint:{}", ckpt.provenance.mode);
                let inputs = BTreeMap::from([("checkpoint".to_string(), format::sha256_hex(&bytes))]);
                Ok((Some(ckpt.params), label, inputs))
            }
        }
    }

    fn params_for(&self, loaded: &Option<ModelParams>, seed: u64) -> Result<ModelParams> {
        match (self, loaded) {
            (_, Some(p)) => Ok(p.clone()),
            (ModelSource::Scratch(arch), None) => Ok(ModelParams::init(arch, seed)?),
            (ModelSource::Checkpoint(_), None) => unreachable!("checkpoints are loaded by resolve"),
        }
    }
}

/// The test trajectory and support points of evaluation run `seed`. Every
/// model source sees the same task for the same seed.
pub fn select_task(trajectories: &[Trajectory], seed: u64, k: usize) -> Result<(&Trajectory, PointSet, ChaCha8Rng)> {
    if trajectories.is_empty() {
        return Err(Error::Usage("held-out dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj = &trajectories[rng.random_range(0..trajectories.len())];
    if k == 0 || k > traj.len() {
        return Err(Error::Usage(format!("cannot draw {k} support points from {} states", traj.len())));
    }
    let idx = rand::seq::index::sample(&mut rng, traj.len(), k).into_vec();
    let points = PointSet::from_trajectory(traj, idx)?;
    Ok((traj, points, rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptSettings {
    pub system: String,
    pub source: String,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub eval_every: usize,
    pub k_points: usize,
    pub lr: f64,
    pub loss: String,
    pub ground_truth_field: bool,
    pub rollout_integrator: crate::config::IntegratorSettings,
}

#[derive(Clone, Debug)]
pub struct AdaptRun {
    pub source: ModelSource,
    pub system: System,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub eval_every: usize,
    pub lr: Option<f64>,
    pub ground_truth_field: bool,
    pub workers: usize,
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub manifest: ExperimentManifest,
    pub report: EvalReport,
    pub summary: EvalSummary,
}

/// Adapts the source model on each seed's task and records rollout errors.
pub fn adapt_eval(
    run: &AdaptRun,
    data_dir: &Path,
    out_dir: &Path,
    on_start: impl FnOnce(&ExperimentManifest),
) -> Result<AdaptOutcome> {
    if run.seeds.is_empty() {
        return Err(Error::Usage("at least one seed is required".into()));
    }
    let data = dataset::load_all(data_dir, &[run.system])?.remove(0);
    let (loaded, label, mut inputs) = run.source.resolve()?;
    inputs.extend(dataset_inputs(std::slice::from_ref(&data)));
    let mut plan = EvalPlan::strided(run.system, run.steps, run.eval_every);
    if let Some(lr) = run.lr {
        plan.adapt.lr = lr;
    }
    let settings = AdaptSettings {
        system: run.system.name().into(),
        source: label.clone(),
        seeds: run.seeds.clone(),
        steps: run.steps,
        eval_every: run.eval_every.max(1),
        k_points: EVAL_K_POINTS,
        lr: plan.adapt.lr,
        loss: plan.adapt.loss.name().into(),
        ground_truth_field: run.ground_truth_field,
        rollout_integrator: (&plan.rollout).into(),
    };
    let manifest = ExperimentManifest::new("adapt", &settings, inputs);
    manifest.write(out_dir)?;
    on_start(&manifest);

    let per_seed = parallel::map_indexed(run.seeds.len(), run.workers, |i| -> Result<_> {
        let seed = run.seeds[i];
        let (test, support, _) = select_task(&data.trajectories, seed, EVAL_K_POINTS)?;
        let params = run.source.params_for(&loaded, seed)?;
        Ok(evaluate_seed(&params, test, &support, &plan, seed, run.ground_truth_field)?)
    });
    let mut report = EvalReport::default();
    for curves in per_seed {
        report.curves.extend(curves?);
    }
    let summary = EvalSummary::new(&report, run.system.name(), &label, &manifest.manifest_sha256);
    format::write_bytes(&out_dir.join(EVAL_CSV_FILE), report::eval_csv(&report, &manifest.manifest_sha256).as_bytes())?;
    format::write_json(&out_dir.join(EVAL_SUMMARY_FILE), &summary)?;
    Ok(AdaptOutcome { manifest, report, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaSettings {
    pub system: String,
    pub source: String,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub layer: String,
    pub k_points: usize,
    pub probe_size: usize,
    pub lr: f64,
    pub loss: String,
}

#[derive(Clone, Debug)]
pub struct CkaRun {
    pub source: ModelSource,
    pub system: System,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub layer: LayerId,
    pub lr: Option<f64>,
    pub workers: usize,
}

#[derive(Clone, Debug)]
pub struct CkaOutcome {
    pub manifest: ExperimentManifest,
    pub curves: Vec<CkaCurve>,
    pub summary: CkaSummary,
}

/// 1−CKA between the source model and its adapted versions on each seed's
/// task, over a probe batch drawn from the held-out trajectories.
pub fn cka(run: &CkaRun, data_dir: &Path, out_dir: &Path, on_start: impl FnOnce(&ExperimentManifest)) -> Result<CkaOutcome> {
    if run.seeds.is_empty() {
        return Err(Error::Usage("at least one seed is required".into()));
    }
    let data = dataset::load_all(data_dir, &[run.system])?.remove(0);
    let (loaded, label, mut inputs) = run.source.resolve()?;
    inputs.extend(dataset_inputs(std::slice::from_ref(&data)));
    let mut cfg = AdaptConfig::for_system(run.system, run.steps);
    if let Some(lr) = run.lr {
        cfg.lr = lr;
    }
    let layer = run.layer.to_string();
    let settings = CkaSettings {
        system: run.system.name().into(),
        source: label.clone(),
        seeds: run.seeds.clone(),
        steps: run.steps,
        layer: layer.clone(),
        k_points: EVAL_K_POINTS,
        probe_size: PROBE_SIZE,
        lr: cfg.lr,
        loss: cfg.loss.name().into(),
    };
    let manifest = ExperimentManifest::new("cka", &settings, inputs);
    manifest.write(out_dir)?;
    on_start(&manifest);

    let curves = parallel::map_indexed(run.seeds.len(), run.workers, |i| -> Result<CkaCurve> {
        let seed = run.seeds[i];
        let (_, support, mut rng) = select_task(&data.trajectories, seed, EVAL_K_POINTS)?;
        let probe = probe_states(&data.trajectories, PROBE_SIZE, &mut rng);
        let probe = GraphBatch::from_states(run.system, probe.iter().map(|s| s.as_slice()))?;
        let params = run.source.params_for(&loaded, seed)?;
        let values = cka_adaptation_curve(&params, &support, &probe, &cfg, run.layer)?;
        Ok(CkaCurve { seed, values })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let summary = CkaSummary::new(&curves, run.system.name(), &label, &layer, &manifest.manifest_sha256);
    format::write_bytes(&out_dir.join(CKA_CSV_FILE), report::cka_csv(&curves, run.system.name(), &layer, &manifest.manifest_sha256).as_bytes())?;
    format::write_json(&out_dir.join(CKA_SUMMARY_FILE), &summary)?;
    Ok(CkaOutcome { manifest, curves, summary })
}

/// Systems whose datasets a scenario needs: its training systems and the held-out one.
pub fn required_systems(scenario: &Scenario) -> Vec<System> {
    let mut s = scenario.train_systems.clone();
    s.push(scenario.test_system);
    s
}
