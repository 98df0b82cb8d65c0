use std::path::Path;
use std::process::{Command, Output};

use mdcorner::store::load_manifest;

fn mdcorner(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mdcorner"));
    cmd.args(args);
    if let Some(dir) = out {
        cmd.arg("--out").arg(dir);
    }
    cmd.output().expect("binary runs")
}

#[test]
fn simulate_plans_every_split() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("d");
    let out = mdcorner(
        &["simulate", "--classes", "all", "--per-class", "5", "--heights", "1.8,1.6", "--seed", "1"],
        Some(&dir),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = load_manifest(dir.join("manifest.json")).unwrap();
    // per class: 4 train + 1 val, plus one test sample at each of two heights
    assert_eq!(m.samples.len(), 12 * (5 + 2));
    assert_eq!(m.samples_in("train").count(), 48);
    assert_eq!(m.samples_in("val").count(), 12);
    assert_eq!(m.samples_in("test").count(), 24);
    assert_eq!(m.split_ratio, [8, 2, 1]);
    assert!(m.samples_in("train").all(|s| s.height_m == 1.8));
    assert_eq!(m.samples_in("test").filter(|s| s.height_m == 1.6).count(), 12);
    assert!(!dir.join("samples").exists(), "echoes are regenerated, not stored");
}

#[test]
fn help_and_usage_errors() {
    let out = mdcorner(&["pipeline", "--help"], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("--deterministic"));
    assert_eq!(mdcorner(&["simulate", "--no-such-flag"], None).status.code(), Some(2));
    assert_eq!(mdcorner(&["unknown-stage"], None).status.code(), Some(2));
    assert_eq!(mdcorner(&["simulate"], None).status.code(), Some(2), "missing --out");
}

#[test]
fn missing_data_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    let out = Command::new(env!("CARGO_BIN_EXE_mdcorner"))
        .args(["train", "--data"])
        .arg(&missing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(missing.to_str().unwrap()));
}

#[test]
fn dump_config_respects_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("cfg.json");
    std::fs::write(&file, r#"{"train": {"epochs": 3, "lr": 0.01}}"#).unwrap();
    let out = mdcorner(&["--config", file.to_str().unwrap(), "train", "--epochs", "5", "--dump-config"], None);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["train"]["epochs"], 5);
    assert_eq!(v["train"]["lr"], 0.01);
    assert_eq!(v["train"]["batch_size"], 32);
    assert_eq!(v["dataset"]["radar"]["num_pri"], 1024);

    std::fs::write(&file, r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = mdcorner(&["--config", file.to_str().unwrap(), "--dump-config"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_run_one_by_one_and_stored_echoes_match_regenerated_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let data = ["--classes", "S3,S8", "--per-class", "3", "--heights", "1.7", "--seed", "5"];
    let sim_a: Vec<&str> = ["simulate"].iter().chain(&data).copied().collect();
    let sim_b: Vec<&str> = ["simulate", "--keep-echo"].iter().chain(&data).copied().collect();
    assert!(mdcorner(&sim_a, Some(&a)).status.success());
    assert!(mdcorner(&sim_b, Some(&b)).status.success());
    assert!(b.join("samples").read_dir().unwrap().count() == 8);

    for dir in [&a, &b] {
        for stage in ["preprocess", "corners", "fuse"] {
            let out = mdcorner(&[stage, "--deterministic"], Some(dir));
            assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        }
    }
    for sub in ["maps", "corners", "clouds"] {
        for entry in a.join(sub).read_dir().unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(
                std::fs::read(a.join(sub).join(&name)).unwrap(),
                std::fs::read(b.join(sub).join(&name)).unwrap(),
                "{sub}/{name:?}"
            );
        }
    }

    let out = mdcorner(&["train", "--epochs", "1", "--batch-size", "2", "--deterministic"], Some(&a));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = mdcorner(&["eval"], Some(&a));
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("val: accuracy") && text.contains("test-h1.70: accuracy"));
    let csv = std::fs::read_to_string(a.join("eval/val.confusion.csv")).unwrap();
    assert!(csv.starts_with("pred\\target,S1,S2"));
    assert_eq!(csv.lines().count(), 13);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("eval/test-h1.70.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total"], 2);

    assert!(mdcorner(&["plot"], Some(&a)).status.success());
    let plots: Vec<String> = a
        .join("plots")
        .read_dir()
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(plots.iter().any(|p| p.ends_with(".r2tm.corners.pgm")));
    assert!(plots.iter().any(|p| p.ends_with(".cloud_td.pgm")));
    let pgm = std::fs::read(a.join("plots").join(&plots[0])).unwrap();
    assert!(pgm.starts_with(b"P5\n256 256\n255\n"));
}
