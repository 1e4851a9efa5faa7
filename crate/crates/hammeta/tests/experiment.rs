use std::path::Path;

use hammeta::checkpoint::Checkpoint;
use hammeta::config::{TrainOverrides, TrainSettings};
use hammeta::dataset::{self, DatasetSpec};
use hammeta::error::Error;
use hammeta::experiment::{self, AdaptRun, CkaRun, ModelSource};
use hammeta::report;
use hammeta_core::model::{Architecture, LayerId};
use hammeta_core::physics::System;
use hammeta_core::scenario::Scenario;
use hammeta_core::training::TrainingMode;

fn make_data(root: &Path, systems: &[System], n: usize) {
    for &s in systems {
        dataset::write(root, &DatasetSpec::new(s, n, 11), 1).unwrap();
    }
}

fn small_settings(test: System, iterations: usize) -> TrainSettings {
    let o = TrainOverrides {
        outer_iterations: Some(iterations),
        hidden: Some(16),
        task_batch_size: Some(4),
        k_points: Some(20),
        checkpoint_every: Some(20),
        seed: Some(5),
        ..Default::default()
    };
    TrainSettings::resolve(&Scenario::for_test_system(test), &o).unwrap()
}

#[test]
fn scenario_splits() {
    let s = small_settings(System::TwoBody, 1);
    assert_eq!(s.train_systems, ["mass-spring", "pendulum", "henon-heiles", "magnetic-mirror"]);
    let s = small_settings(System::MassSpring, 1);
    assert!(!s.train_systems.iter().any(|n| n == "mass-spring"));
}

#[test]
fn training_smoke_checkpoints_and_reproducibility() {
    let data = tempfile::tempdir().unwrap();
    make_data(data.path(), &[System::Pendulum, System::HenonHeiles, System::MagneticMirror], 100);
    let settings = small_settings(System::MassSpring, 50);
    for mode in [TrainingMode::Meta, TrainingMode::Pretrain] {
        let out_a = tempfile::tempdir().unwrap();
        let a = experiment::train(&settings, mode, data.path(), out_a.path(), |_| {}).unwrap();
        assert_eq!(a.log.len(), 50);
        assert!(a.log.iter().all(|r| r.mean_inner_pre_loss.is_finite() && r.mean_outer_loss.is_finite()));
        assert_eq!(a.log.last().unwrap().iteration, 50);
        for it in [20, 40] {
            assert!(out_a.path().join(format!("iter_{it:06}.ckpt")).is_file());
        }
        let ckpt = Checkpoint::load(&a.final_checkpoint).unwrap();
        assert_eq!(ckpt.manifest_sha256, a.manifest.manifest_sha256);
        assert_eq!((ckpt.provenance.iteration, ckpt.provenance.mode.as_str()), (50, mode.name()));
        assert_eq!(ckpt.params.arch, Architecture::with_hidden(16));

        let logged = report::read_training_log(&out_a.path().join(experiment::TRAINING_LOG_FILE)).unwrap();
        assert_eq!(logged, a.log);

        let out_b = tempfile::tempdir().unwrap();
        let b = experiment::train(&settings, mode, data.path(), out_b.path(), |_| {}).unwrap();
        assert_eq!(a.manifest, b.manifest);
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.mean_inner_pre_loss, y.mean_inner_pre_loss);
            assert_eq!(x.mean_outer_loss, y.mean_outer_loss);
        }
        assert_eq!(Checkpoint::load(&b.final_checkpoint).unwrap(), ckpt);
    }
}

#[test]
fn training_needs_every_training_dataset() {
    let data = tempfile::tempdir().unwrap();
    make_data(data.path(), &[System::Pendulum], 2);
    let out = tempfile::tempdir().unwrap();
    let err = experiment::train(&small_settings(System::TwoBody, 1), TrainingMode::Meta, data.path(), out.path(), |_| {})
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("mass-spring, pendulum, henon-heiles, magnetic-mirror"), "{msg}");
    assert_eq!(err.exit_code(), hammeta::error::EXIT_USAGE);
}

fn adapt_run(source: ModelSource, seeds: u64, steps: usize, ground_truth_field: bool) -> AdaptRun {
    AdaptRun {
        source,
        system: System::MassSpring,
        seeds: (0..seeds).collect(),
        steps,
        eval_every: 5,
        lr: None,
        ground_truth_field,
        workers: 2,
    }
}

#[test]
fn adapt_reports() {
    let data = tempfile::tempdir().unwrap();
    make_data(data.path(), &[System::MassSpring], 20);

    let out = tempfile::tempdir().unwrap();
    let truth = experiment::adapt_eval(&adapt_run(ModelSource::Scratch(Architecture::with_hidden(8)), 2, 0, true), data.path(), out.path(), |_| {}).unwrap();
    assert_eq!(truth.report.curves.len(), 2);
    assert!(truth.report.curves.iter().all(|c| c.errors.iter().all(|&e| e < 1e-5)));

    let scratch_dir = tempfile::tempdir().unwrap();
    let scratch = experiment::adapt_eval(&adapt_run(ModelSource::Scratch(Architecture::with_hidden(8)), 10, 10, false), data.path(), scratch_dir.path(), |_| {}).unwrap();
    assert_eq!(scratch.summary.seeds, (0..10).collect::<Vec<_>>());
    assert_eq!(scratch.summary.adaptation_steps, vec![0, 5, 10]);
    assert_eq!(scratch.summary.rows.len(), 3 * 200);
    assert!(scratch.summary.rows.iter().all(|r| r.n_seeds == 10 && r.err_stderr >= 0.0 && r.gma_stderr >= 0.0));
    let on_disk: report::EvalSummary = hammeta::format::read_json(&scratch_dir.path().join(experiment::EVAL_SUMMARY_FILE)).unwrap();
    assert_eq!(on_disk, scratch.summary);
    let rows = report::read_eval_csv(&scratch_dir.path().join(experiment::EVAL_CSV_FILE)).unwrap();
    assert_eq!(rows.len(), 10 * 3 * 200);

    // a checkpoint source on the same seeds is evaluated on the same tasks
    let ckpt_path = scratch_dir.path().join("model.ckpt");
    let ckpt = Checkpoint {
        manifest_sha256: "0".repeat(64),
        provenance: hammeta::checkpoint::Provenance { mode: "metatrain".into(), scenario: "mass-spring".into(), seed: 0, iteration: 0, datasets: vec![] },
        params: hammeta_core::model::ModelParams::init(&Architecture::with_hidden(8), 3).unwrap(),
    };
    ckpt.save(&ckpt_path).unwrap();
    let ck_dir = tempfile::tempdir().unwrap();
    let meta = experiment::adapt_eval(&adapt_run(ModelSource::Checkpoint(ckpt_path), 10, 10, false), data.path(), ck_dir.path(), |_| {}).unwrap();
    assert_eq!(meta.summary.seeds, scratch.summary.seeds);
    for (a, b) in meta.report.curves.iter().zip(&scratch.report.curves) {
        assert_eq!((a.seed, a.adaptation_step, &a.times), (b.seed, b.adaptation_step, &b.times));
    }
    assert_ne!(meta.manifest.manifest_sha256, scratch.manifest.manifest_sha256);
    assert_eq!(meta.summary.source, "checkpoint:metatrain");
}

#[test]
fn cka_curves() {
    let data = tempfile::tempdir().unwrap();
    make_data(data.path(), &[System::Pendulum], 10);
    let out = tempfile::tempdir().unwrap();
    let run = CkaRun {
        source: ModelSource::Scratch(Architecture::with_hidden(16)),
        system: System::Pendulum,
        seeds: vec![0, 1],
        steps: 12,
        layer: LayerId::Dense(3),
        lr: Some(1e-2),
        workers: 1,
    };
    let r = experiment::cka(&run, data.path(), out.path(), |_| {}).unwrap();
    for c in &r.curves {
        assert_eq!(c.values.len(), 13);
        assert_eq!(c.values[0], 0.0);
        assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let csv = std::fs::read_to_string(out.path().join(experiment::CKA_CSV_FILE)).unwrap();
    assert!(csv.starts_with("# schema_version=1 manifest_sha256="));
    assert!(csv.lines().nth(2).unwrap().ends_with(",0,0"));
    assert_eq!(csv.lines().count(), 2 + 2 * 13);
}

#[test]
fn missing_held_out_dataset() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let err = experiment::adapt_eval(&adapt_run(ModelSource::Scratch(Architecture::with_hidden(8)), 1, 0, false), data.path(), out.path(), |_| {})
        .unwrap_err();
    assert!(matches!(err, Error::MissingData { .. }));
}
