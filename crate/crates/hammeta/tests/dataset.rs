use std::fs;
use std::path::Path;

use hammeta::dataset::{self, DatasetSpec};
use hammeta::error::Error;
use hammeta_core::integrator::IntegratorConfig;
use hammeta_core::physics::System;

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn layout_and_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::new(System::MassSpring, 10, 7);
    let m = dataset::write(root.path(), &spec, 1).unwrap();
    assert_eq!(m.blocks.len(), 1);
    assert!(m.energy_check.all_passed());
    assert_eq!(m.energy_check.drift.len(), 10);

    let bytes = fs::read(root.path().join("mass-spring").join(&m.blocks[0].file)).unwrap();
    assert_eq!(&bytes[..8], b"HMDATA01");
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
    assert_eq!(header["shape"], serde_json::json!([10, 200, 9]));
    assert_eq!(header["manifest_sha256"], serde_json::json!(m.manifest_sha256));
    assert_eq!(bytes.len(), 12 + header_len + 8 * 10 * 200 * 9);

    let loaded = dataset::load(root.path(), System::MassSpring).unwrap();
    assert_eq!(loaded.trajectories, dataset::generate(&spec, 1).unwrap());
    assert!(loaded.trajectories.iter().all(|t| t.len() == 200 && t.states[0].len() == 4));
}

#[test]
fn regeneration_is_byte_identical_for_any_worker_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut spec = DatasetSpec::new(System::ThreeBody, 6, 3);
    spec.block_size = 4;
    dataset::write(a.path(), &spec, 1).unwrap();
    dataset::write(b.path(), &spec, 3).unwrap();
    let da = read_dir_bytes(&a.path().join("three-body"));
    assert_eq!(da.len(), 3);
    assert_eq!(da, read_dir_bytes(&b.path().join("three-body")));
}

#[test]
fn loose_tolerances_are_flagged() {
    let root = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::with_integrator(System::MagneticMirror, 10, 1, &IntegratorConfig::with_tolerances(1e-2, 1e-2));
    let m = dataset::write(root.path(), &spec, 1).unwrap();
    assert!(!m.energy_check.failed.is_empty());
    assert!(m.energy_check.max_drift > dataset::ENERGY_TOLERANCE);
    for &i in &m.energy_check.failed {
        assert!(m.energy_check.drift[i] > dataset::ENERGY_TOLERANCE);
    }
}

#[test]
fn tampering_is_detected() {
    let root = tempfile::tempdir().unwrap();
    let m = dataset::write(root.path(), &DatasetSpec::new(System::Pendulum, 3, 0), 1).unwrap();
    let path = root.path().join("pendulum").join(&m.blocks[0].file);
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&path, bytes).unwrap();
    assert!(matches!(dataset::load(root.path(), System::Pendulum), Err(Error::Format { .. })));
}

#[test]
fn missing_datasets_list_required_systems() {
    let root = tempfile::tempdir().unwrap();
    dataset::write(root.path(), &DatasetSpec::new(System::Pendulum, 2, 0), 1).unwrap();
    let need = [System::Pendulum, System::HenonHeiles, System::TwoBody];
    match dataset::load_all(root.path(), &need) {
        Err(e @ Error::MissingData { .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("pendulum, henon-heiles, two-body"), "{msg}");
            let Error::MissingData { missing, .. } = e else { unreachable!() };
            assert_eq!(missing, vec![System::HenonHeiles, System::TwoBody]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn sampling_failure_names_the_trajectory() {
    let mut spec = DatasetSpec::new(System::TwoBody, 2, 0);
    spec.integrator.max_steps = 3;
    match dataset::generate(&spec, 1) {
        Err(Error::Generation { system, index, .. }) => assert_eq!((system, index), (System::TwoBody, 0)),
        other => panic!("{other:?}"),
    }
}
