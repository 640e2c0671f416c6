//! The `ecog` binary end to end: exit codes, artifacts and reruns.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ecog(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ecog"));
    if let Some(text) = config {
        let path = dir.join("config.json");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
    "synth": { "deltas": [0.0, 0.5, 1.0], "channels": 4, "events_per_condition": 20 },
    "epoching": { "decimate": 20 },
    "knn": { "umap": { "n_epochs": 100 } },
    "dl": { "task": "two-class", "search": { "n_trials": 1 }, "train": { "epochs": 3 } }
}"#;

/// Writes the small cohort to `dir/cohort`.
fn cohort(dir: &Path, config: &str) -> std::path::PathBuf {
    let root = dir.join("cohort");
    ok(ecog(&["--out", path(&root), "synth"], Some(config), dir));
    root
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = ecog(&["umap-knn"], Some(r#"{ "epoching": { "windw": 10 } }"#), dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("windw"));
}

#[test]
fn invalid_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = ecog(&["--set", "epoching.split_ratio=1.5", "synth"], None, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = ecog(&["umap-knn"], None, dir.path());
    assert_eq!(out.status.code(), Some(2), "missing dataset root");
    let out = ecog(&["finetune", "--data", path(dir.path())], None, dir.path());
    assert_eq!(out.status.code(), Some(2), "missing source model");
}

#[test]
fn data_problems_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let root = cohort(dir.path(), SMALL);
    let out =
        ecog(&["--data", path(&root), "--set", r#"participants=["p0","p9"]"#, "umap-knn"], Some(SMALL), dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p9"));

    let out = ecog(&["--data", path(&root), "--set", r#"participants=["p0"]"#, "screen"], Some(SMALL), dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n ≥ 3 required"));

    let garbage = dir.path().join("garbage.ecnn");
    fs::write(&garbage, b"not a model").unwrap();
    let out = ecog(&["--data", path(&root), "finetune", "--source", path(&garbage)], Some(SMALL), dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn finetune_rejects_a_model_for_other_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let narrow = cohort(dir.path(), SMALL);
    let wide_dir = dir.path().join("wide");
    fs::create_dir_all(&wide_dir).unwrap();
    let wide = cohort(&wide_dir, &SMALL.replace(r#""channels": 4"#, r#""channels": 6"#));
    let train_out = dir.path().join("train");
    ok(ecog(
        &["--data", path(&wide), "--out", path(&train_out), "--set", r#"participants=["p2"]"#, "train"],
        Some(SMALL),
        dir.path(),
    ));
    let source = train_out.join("models/p2.ecnn");
    let out = ecog(
        &["--data", path(&narrow), "--out", path(&dir.path().join("ft")), "finetune", "--source", path(&source)],
        Some(SMALL),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expects"));
}

#[test]
fn zero_epoch_finetune_reproduces_the_source() {
    let dir = tempfile::tempdir().unwrap();
    let root = cohort(dir.path(), SMALL);
    let train_out = dir.path().join("train");
    let only = r#"participants=["p2"]"#;
    ok(ecog(&["--data", path(&root), "--out", path(&train_out), "--set", only, "train"], Some(SMALL), dir.path()));
    let trained = &json(&train_out.join("dl_results.json"))[0];
    let ft_out = dir.path().join("ft");
    let source = train_out.join("models/p2.ecnn");
    ok(ecog(
        &[
            "--data",
            path(&root),
            "--out",
            path(&ft_out),
            "--set",
            only,
            "--set",
            "finetune.train.epochs=0",
            "finetune",
            "--source",
            path(&source),
        ],
        Some(SMALL),
        dir.path(),
    ));
    let entry = &json(&ft_out.join("finetune.json"))["entries"][0];
    assert_eq!(entry["before"], entry["after"]);
    assert_eq!(entry["after"]["accuracy"], trained["test_accuracy"]);
    assert_eq!(entry["after"]["loss"], trained["test_loss"]);
    assert_eq!(entry["epochs_run"], 0);
}

#[test]
fn reruns_are_byte_identical_and_reports_hash_everything() {
    let dir = tempfile::tempdir().unwrap();
    let root = cohort(dir.path(), SMALL);
    let out = dir.path().join("knn");
    let run = || {
        ok(ecog(
            &["--data", path(&root), "--out", path(&out), "--set", "variant=both", "umap-knn"],
            Some(SMALL),
            dir.path(),
        ));
        let table = fs::read(out.join("table1.csv")).unwrap();
        let report = fs::read(out.join("report-umap-knn.json")).unwrap();
        fs::remove_dir_all(&out).unwrap();
        (table, report)
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let report: Value = serde_json::from_slice(&a.1).unwrap();
    assert_eq!(report["inputs"].as_object().unwrap().len(), 12, "3 participants × 2 conditions × 2 files");
    assert!(report["outputs"].as_object().unwrap().contains_key("table1.csv"));
    assert_eq!(report["config"]["variant"], "both");
    let csv = String::from_utf8(a.0).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 1, "header, participants, average");
}

#[test]
fn three_class_task_is_learnable_on_separable_synthetic_data() {
    let config = r#"{
        "synth": { "deltas": [1.0], "events_per_condition": 30 },
        "dl": { "task": "three-class", "search": { "n_trials": 10 }, "train": { "epochs": 30 } }
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let root = cohort(dir.path(), config);
    let out = dir.path().join("train");
    ok(ecog(&["--data", path(&root), "--out", path(&out), "train"], Some(config), dir.path()));
    let acc = json(&out.join("dl_results.json"))[0]["test_accuracy"].as_f64().unwrap();
    assert!(acc >= 0.9, "{acc}");
}
