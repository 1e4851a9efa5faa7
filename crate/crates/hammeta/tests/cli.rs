use std::path::Path;
use std::process::{Command, Output};

fn hammeta(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hammeta"))
        .env("HAMMETA_DATA_DIR", data_dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hammeta(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(hammeta(dir.path(), &["gendata", "--system", "double-pendulum"]).status.code(), Some(1));
    let o = hammeta(dir.path(), &["metatrain", "--scenario", "pendulum", "--out", "x", "--k-points", "500"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(hammeta(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_data_is_reported_with_required_systems() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = hammeta(dir.path(), &["pretrain", "--scenario", "three-body", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mass-spring, pendulum, henon-heiles, magnetic-mirror"), "{}", stderr(&o));
}

#[test]
fn end_to_end_with_data_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = hammeta(dir.path(), &["gendata", "--system", "mass-spring", "--system", "pendulum", "--n", "12", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("mass-spring/manifest.json").is_file());
    assert!(stderr(&o).contains("\"rtol\""), "settings are printed at startup");

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"outer_iterations": 3, "hidden": 8, "task_batch_size": 2, "k_points": 10}"#).unwrap();
    let run = dir.path().join("run");
    let o = hammeta(
        dir.path(),
        &["metatrain", "--scenario", "henon-heiles", "--config", cfg.to_str().unwrap(), "--outer-iterations", "4", "--out", run.to_str().unwrap()],
    );
    // henon-heiles trains on mass-spring, pendulum and magnetic-mirror
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("magnetic-mirror"));
    assert!(hammeta(dir.path(), &["gendata", "--system", "magnetic-mirror", "--n", "12"]).status.success());
    let o = hammeta(
        dir.path(),
        &["metatrain", "--scenario", "henon-heiles", "--config", cfg.to_str().unwrap(), "--outer-iterations", "4", "--out", run.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let log = hammeta::report::read_training_log(&run.join("training_log.csv")).unwrap();
    assert_eq!(log.len(), 4, "flags override the config file");
    let settings: serde_json::Value = hammeta::format::read_json(&run.join("manifest.json")).unwrap();
    assert_eq!(settings["settings"]["meta"]["k_points"], 10);

    let ckpt = run.join("final.ckpt");
    let eval = dir.path().join("eval");
    let o = hammeta(
        dir.path(),
        &["adapt", "--checkpoint", ckpt.to_str().unwrap(), "--system", "pendulum", "--seeds", "2", "--steps", "2", "--eval-every", "1", "--out", eval.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(eval.join("errors.csv").is_file() && eval.join("summary.json").is_file());

    let cka = dir.path().join("cka");
    let o = hammeta(
        dir.path(),
        &["cka", "--checkpoint", "scratch", "--hidden", "8", "--system", "pendulum", "--seeds", "1", "--steps", "3", "--out", cka.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(cka.join("cka.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4);
}

#[test]
fn divergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["mass-spring", "pendulum", "henon-heiles"] {
        assert!(hammeta(dir.path(), &["gendata", "--system", s, "--n", "4"]).status.success());
    }
    let run = dir.path().join("run");
    let o = hammeta(
        dir.path(),
        &[
            "metatrain", "--scenario", "magnetic-mirror", "--hidden", "8", "--outer-iterations", "50", "--inner-lr", "1e200",
            "--out", run.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}
