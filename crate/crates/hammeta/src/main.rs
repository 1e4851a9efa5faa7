use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hammeta::config::{TrainOverrides, TrainSettings};
use hammeta::dataset::{self, DatasetSpec};
use hammeta::error::{Error, Result, EXIT_USAGE};
use hammeta::experiment::{self, AdaptRun, CkaRun, ExperimentManifest, ModelSource};
use hammeta::report::LogRow;
use hammeta_core::integrator::IntegratorConfig;
use hammeta_core::model::{Architecture, LayerId};
use hammeta_core::physics::System;
use hammeta_core::scenario::{Scenario, DESK_TRAJECTORIES};
use hammeta_core::training::TrainingMode;

#[derive(Parser)]
#[command(name = "hammeta", version, about = "Meta-learned graph Hamiltonian networks across physical systems")]
struct Cli {
    /// Root directory holding one dataset per system.
    #[arg(long, global = true, env = "HAMMETA_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate trajectory datasets.
    Gendata(GendataArgs),
    /// Meta-train (MAML) on a scenario's training systems.
    Metatrain(TrainArgs),
    /// Jointly pre-train on a scenario's training systems without meta-learning.
    Pretrain(TrainArgs),
    /// Adapt a model on held-out tasks and report rollout errors.
    Adapt(AdaptArgs),
    /// Report 1−CKA between a model and its adapted versions.
    Cka(CkaArgs),
}

#[derive(Args)]
struct GendataArgs {
    /// System name, repeatable; `all` selects every system.
    #[arg(long = "system", required = true)]
    systems: Vec<String>,
    #[arg(long, default_value_t = DESK_TRAJECTORIES)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output root (defaults to the data directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = IntegratorConfig::DATASET.rtol)]
    rtol: f64,
    #[arg(long, default_value_t = IntegratorConfig::DATASET.atol)]
    atol: f64,
    #[arg(long, default_value_t = dataset::DEFAULT_BLOCK_SIZE)]
    block_size: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Scenario named after its held-out test system.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    out: PathBuf,
    /// JSON file of setting overrides; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    inner_lr: Option<f64>,
    #[arg(long)]
    outer_lr: Option<f64>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    outer_iterations: Option<usize>,
    #[arg(long)]
    task_batch_size: Option<usize>,
    #[arg(long)]
    k_points: Option<usize>,
    /// Drop second-order terms from the meta-gradient.
    #[arg(long)]
    first_order: bool,
    /// `logcosh` or `hnn_l2`.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    disjoint_query: bool,
    /// Width of every hidden layer.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Use the full iteration budget instead of the desk-scale one.
    #[arg(long)]
    full_scale: bool,
}

impl TrainArgs {
    fn overrides(&self) -> Result<TrainOverrides> {
        let file = match &self.config {
            Some(p) => TrainOverrides::from_file(p)?,
            None => TrainOverrides::default(),
        };
        let flags = TrainOverrides {
            inner_lr: self.inner_lr,
            outer_lr: self.outer_lr,
            inner_steps: self.inner_steps,
            outer_iterations: self.outer_iterations,
            task_batch_size: self.task_batch_size,
            k_points: self.k_points,
            first_order: self.first_order.then_some(true),
            loss: self.loss.clone(),
            disjoint_query: self.disjoint_query.then_some(true),
            hidden: self.hidden,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            full_scale: self.full_scale.then_some(true),
        };
        Ok(file.merge(flags))
    }
}

#[derive(Args)]
struct SourceArgs {
    /// Checkpoint path, or `scratch` for a fresh initialization per seed.
    #[arg(long)]
    checkpoint: String,
    #[arg(long)]
    system: String,
    #[arg(long)]
    out: PathBuf,
    /// Number of evaluation seeds.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// Adam learning rate (defaults to the per-system value).
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden width of scratch models.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl SourceArgs {
    fn source(&self) -> ModelSource {
        let arch = self.hidden.map_or_else(Architecture::default, Architecture::with_hidden);
        ModelSource::parse(&self.checkpoint, arch)
    }

    fn seeds(&self) -> Vec<u64> {
        (self.first_seed..self.first_seed + self.seeds).collect()
    }
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Roll out every this many adaptation steps (the last step always).
    #[arg(long, default_value_t = 10)]
    eval_every: usize,
    /// Roll out the true vector field instead of the model (harness self-test).
    #[arg(long)]
    ground_truth_field: bool,
}

#[derive(Args)]
struct CkaArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value = "fc3")]
    layer: String,
}

fn parse_system(s: &str) -> Result<System> {
    s.parse().map_err(|e| Error::Usage(format!("{e}")))
}

fn announce(m: &ExperimentManifest) {
    eprintln!("{} settings:\n{}", m.command, serde_json::to_string_pretty(&m.settings).expect("json"));
    eprintln!("manifest sha256 {}", m.manifest_sha256);
}

fn gendata(data_dir: PathBuf, a: GendataArgs) -> Result<()> {
    let systems = if a.systems.iter().any(|s| s == "all") {
        System::ALL.to_vec()
    } else {
        a.systems.iter().map(|s| parse_system(s)).collect::<Result<Vec<_>>>()?
    };
    let root = a.out.unwrap_or(data_dir);
    let integrator = IntegratorConfig::with_tolerances(a.rtol, a.atol);
    integrator.validate().map_err(|e| Error::Usage(e.to_string()))?;
    for system in systems {
        let mut spec = DatasetSpec::with_integrator(system, a.n, a.seed, &integrator);
        spec.block_size = a.block_size;
        eprintln!("gendata settings:\n{}", serde_json::to_string_pretty(&spec).expect("json"));
        let m = dataset::write(&root, &spec, a.workers)?;
        let check = &m.energy_check;
        println!(
            "{system}: {} trajectories in {} ({} blocks), energy check {}/{} passed, max drift {:e}",
            spec.n_trajectories,
            dataset::system_dir(&root, system).display(),
            m.blocks.len(),
            check.passed,
            spec.n_trajectories,
            check.max_drift
        );
        if !check.all_passed() {
            eprintln!("warning: {system} trajectories {:?} exceed drift {:e}", check.failed, check.tolerance);
        }
    }
    Ok(())
}

fn train(data_dir: PathBuf, a: TrainArgs, mode: TrainingMode) -> Result<()> {
    let scenario = Scenario::for_test_system(parse_system(&a.scenario)?);
    let settings = TrainSettings::resolve(&scenario, &a.overrides()?)?;
    eprintln!("{} settings:\n{}", mode.name(), serde_json::to_string_pretty(&settings).expect("json"));
    let every = (settings.meta.outer_iterations / 20).max(1);
    let out = experiment::train(&settings, mode, &data_dir, &a.out, |r: &LogRow| {
        if r.iteration % every == 0 {
            eprintln!(
                "iter {:>6}  inner {:.6e}  outer {:.6e}  {:.1}s",
                r.iteration, r.mean_inner_pre_loss, r.mean_outer_loss, r.wall_time
            );
        }
    })?;
    println!("wrote {} (manifest {})", out.final_checkpoint.display(), out.manifest.manifest_sha256);
    Ok(())
}

fn adapt(data_dir: PathBuf, a: AdaptArgs) -> Result<()> {
    let run = AdaptRun {
        source: a.source.source(),
        system: parse_system(&a.source.system)?,
        seeds: a.source.seeds(),
        steps: a.steps,
        eval_every: a.eval_every,
        lr: a.source.lr,
        ground_truth_field: a.ground_truth_field,
        workers: a.source.workers,
    };
    let out = experiment::adapt_eval(&run, &data_dir, &a.source.out, announce)?;
    for g in &out.summary.final_gma {
        println!("step {:>5}: final GMA {:.6e} ± {:.2e} over {} seeds", g.adaptation_step, g.mean, g.stderr, g.per_seed.len());
    }
    Ok(())
}

fn cka(data_dir: PathBuf, a: CkaArgs) -> Result<()> {
    let layer: LayerId = a.layer.parse().map_err(|e| Error::Usage(format!("{e}")))?;
    let run = CkaRun {
        source: a.source.source(),
        system: parse_system(&a.source.system)?,
        seeds: a.source.seeds(),
        steps: a.steps,
        layer,
        lr: a.source.lr,
        workers: a.source.workers,
    };
    let out = experiment::cka(&run, &data_dir, &a.source.out, announce)?;
    println!("mean 1-CKA at {}: {:.6e} ± {:.2e}", out.summary.layer, out.summary.mean, out.summary.stderr);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gendata(a) => gendata(cli.data_dir, a),
        Command::Metatrain(a) => train(cli.data_dir, a, TrainingMode::Meta),
        Command::Pretrain(a) => train(cli.data_dir, a, TrainingMode::Pretrain),
        Command::Adapt(a) => adapt(cli.data_dir, a),
        Command::Cka(a) => cka(cli.data_dir, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
