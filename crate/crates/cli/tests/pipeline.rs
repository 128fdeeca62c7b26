use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_audioshield"));
    c.env_remove("AUDIOSHIELD_SEED").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn audioshield")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Three synthetic words, 25 clips each, shared by every test.
fn dataset() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let out = run(&["synth", "--out", dir.path().to_str().unwrap(), "--classes", "yes,no,up", "--per-class", "25", "--seed", "5"]);
        assert!(out.status.success(), "{}", stderr(&out));
        dir
    })
    .path()
}

/// A fast config writing into `out`.
fn config(out: &Path) -> Value {
    json!({
        "dataset_root": dataset(),
        "output_dir": out,
        "seed": 11,
        "test_fraction": 0.2,
        "train": {"epochs": 8, "hidden": [32], "validation_fraction": 0.0},
        "attack": {"max_iterations": 40, "epsilon": 0.2},
        "per_pair": 1,
        "learners": {"forest": {"n_trees": 5}, "adaboost": {"rounds": 5}, "gbt": {"rounds": 5}},
        "split_ratio": 0.5,
        "benign_count": 15
    })
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn step(cmd: &str, cfg: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

/// train → attack-gen → detect → evaluate, once.
fn pipeline() -> &'static (TempDir, PathBuf) {
    static RUN: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), &config(&dir.path().join("out")));
        for cmd in ["train", "attack-gen", "detect", "evaluate"] {
            let o = step(cmd, &cfg, &[]);
            assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        }
        (dir, cfg)
    })
}

fn out_dir() -> PathBuf {
    pipeline().0.path().join("out")
}

#[test]
fn train_writes_model_log_and_resolved_config() {
    let out = out_dir();
    assert!(out.join("model.kwsm").is_file());
    let log: Value = serde_json::from_str(&std::fs::read_to_string(out.join("train_log.json")).unwrap()).unwrap();
    assert_eq!(log["seed"], 11);
    assert_eq!(log["classes"], json!(["no", "up", "yes"]));
    assert_eq!(log["test_clips"], 15);
    let resolved: Value = serde_json::from_str(&std::fs::read_to_string(out.join("train.config.json")).unwrap()).unwrap();
    assert_eq!(resolved["attack"]["seed"], 11);
}

#[test]
fn retraining_with_same_seed_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &config(&dir.path().join("out")));
    assert!(step("train", &cfg, &[]).status.success());
    let a = std::fs::read(dir.path().join("out/model.kwsm")).unwrap();
    assert_eq!(a, std::fs::read(out_dir().join("model.kwsm")).unwrap());
}

#[test]
fn missing_dataset_root_exits_2() {
    let dir = TempDir::new().unwrap();
    let mut c = config(&dir.path().join("out"));
    c["dataset_root"] = json!(dir.path().join("nope"));
    let o = step("train", &write_config(dir.path(), &c), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset root not found"), "{}", stderr(&o));
}

#[test]
fn bad_config_and_bad_override_exit_2() {
    let dir = TempDir::new().unwrap();
    let mut c = config(&dir.path().join("out"));
    c.as_object_mut().unwrap().remove("seed");
    assert_eq!(step("train", &write_config(dir.path(), &c), &[]).status.code(), Some(2));
    let cfg = write_config(dir.path(), &config(&dir.path().join("out")));
    assert_eq!(step("train", &cfg, &["--set", "noequals"]).status.code(), Some(2));
    assert_eq!(step("train", &cfg, &["--set", "split_ratio=3"]).status.code(), Some(2));
    assert_eq!(run(&["train"]).status.code(), Some(2));
}

#[test]
fn manifest_has_one_row_per_ordered_pair() {
    let text = std::fs::read_to_string(out_dir().join("manifest.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "source_path,source_label,target_label,adversarial_path,success,iterations,final_target_prob"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!(r[4] == "true" || r[4] == "false");
        assert_ne!(r[1], r[2]);
        assert!(out_dir().join(r[3]).is_file());
    }
}

#[test]
fn verdict_files_cover_the_test_split() {
    let out = out_dir();
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    let n_adv = manifest.lines().skip(1).filter(|l| l.split(',').nth(4) == Some("true")).count();
    assert!(n_adv >= 2, "too few successful attacks for the fixture: {n_adv}");
    let n_test = (n_adv - (n_adv as f64 * 0.5).round() as usize) + (15 - 8);
    for scheme in ["majority", "vote_threshold", "l1", "forest_sad", "forest_cp", "ada_sad", "ada_cp", "gbt_sad", "gbt_cp"] {
        let text = std::fs::read_to_string(out.join(format!("verdicts_{scheme}.jsonl"))).unwrap();
        assert_eq!(text.lines().count(), n_test, "{scheme}");
        for line in text.lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["scheme"], scheme);
            assert_eq!(v["votes"].as_array().unwrap().len(), 6);
            assert!(v["actual_adversarial"].is_boolean());
        }
    }
}

#[test]
fn majority_runs_without_training_split() {
    let (_, _) = pipeline();
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    for f in ["model.kwsm", "manifest.csv"] {
        std::fs::copy(out_dir().join(f), out.join(f)).unwrap();
    }
    copy_dir(&out_dir().join("adversarial"), &out.join("adversarial"));
    let cfg = write_config(dir.path(), &config(&out));

    let o = step("detect", &cfg, &["--scheme", "majority", "--set", "split_ratio=0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = std::fs::read_to_string(out.join("verdicts_majority.jsonl")).unwrap().lines().count();
    let n_adv = std::fs::read_to_string(out.join("manifest.csv")).unwrap().lines().filter(|l| l.contains(",true,")).count();
    assert_eq!(lines, n_adv + 15);

    let o = step("detect", &cfg, &["--scheme", "vote_threshold", "--set", "split_ratio=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scheme requires training data"), "{}", stderr(&o));
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

#[test]
fn evaluate_reports_every_scheme_deterministically() {
    let (_, cfg) = pipeline();
    let out = out_dir();
    let reports: Value = serde_json::from_str(&std::fs::read_to_string(out.join("reports.json")).unwrap()).unwrap();
    let names: Vec<&str> = reports.as_array().unwrap().iter().map(|r| r["scheme"].as_str().unwrap()).collect();
    assert_eq!(names.len(), 9);
    for r in reports.as_array().unwrap() {
        let total: u64 = ["tp", "fp", "tn", "fn"].iter().map(|k| r[k].as_u64().unwrap()).sum();
        assert!(total > 0);
    }
    let heat = std::fs::read_to_string(out.join("heatmap.csv")).unwrap();
    assert!(heat.starts_with("source/target,no,up,yes"));
    let analysis: Value = serde_json::from_str(&std::fs::read_to_string(out.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(analysis["scheme"], "vote_threshold");

    let before = std::fs::read(out.join("reports.json")).unwrap();
    let before_heat = std::fs::read(out.join("heatmap.csv")).unwrap();
    let o = step("evaluate", cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(before, std::fs::read(out.join("reports.json")).unwrap());
    assert_eq!(before_heat, std::fs::read(out.join("heatmap.csv")).unwrap());
}

#[test]
fn evaluate_without_verdicts_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::copy(out_dir().join("model.kwsm"), out.join("model.kwsm")).unwrap();
    let o = step("evaluate", &write_config(dir.path(), &config(&out)), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("verdict file not found"), "{}", stderr(&o));
}

#[test]
fn seed_env_overrides_config() {
    let dir = TempDir::new().unwrap();
    let mut c = config(&dir.path().join("out"));
    c["dataset_root"] = json!(dir.path().join("missing"));
    let cfg = write_config(dir.path(), &c);
    let o = bin().args(["train", "--config", cfg.to_str().unwrap()]).env("AUDIOSHIELD_SEED", "x").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("AUDIOSHIELD_SEED"));

    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::copy(out_dir().join("model.kwsm"), out.join("model.kwsm")).unwrap();
    let cfg = write_config(dir.path(), &config(&out));
    let o = bin()
        .args(["attack-gen", "--config", cfg.to_str().unwrap(), "--set", "per_pair=0"])
        .env("AUDIOSHIELD_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("attack-gen.config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 77);
    assert_eq!(resolved["attack"]["seed"], 77);
}

#[test]
fn jobs_flag_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::copy(out_dir().join("model.kwsm"), out.join("model.kwsm")).unwrap();
    let cfg = write_config(dir.path(), &config(&out));
    let o = run(&["--jobs", "2", "attack-gen", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(out.join("manifest.csv")).unwrap(),
        std::fs::read(out_dir().join("manifest.csv")).unwrap()
    );
}
