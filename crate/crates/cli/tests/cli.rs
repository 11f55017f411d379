use std::path::{Path, PathBuf};
use std::process::Command;

use repfuse::grad::GradVector;
use repfuse::models::ModelSpec;
use repfuse::protocol::CSV_HEADER;
use repfuse::representative::Representative;
use repfuse::Tensor64;
use repfuse_cli::{compare_header, export_representative, run, write_comparison, RawConfig, RunSpec};

fn segment() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/segment/segment.csv")
}

fn seg_config(mode: &str, out: &Path, rounds: usize) -> RawConfig {
    RawConfig::parse(&format!(
        "mode={mode}\ndataset=csv\ncsv={}\nrounds={rounds}\nout={}\n",
        segment().display(),
        out.display()
    ))
    .unwrap()
}

fn rep(x: Tensor64, label: usize) -> Representative<f64> {
    let layout = ModelSpec::mlp(&[2], &[], 2).unwrap().layout();
    Representative {
        x,
        label,
        batch_size: 1,
        matching_loss: 0.0,
        batch_loss: 0.0,
        gradient: GradVector::zeros(&layout),
    }
}

#[test]
fn gray_image_export() {
    let dir = tempfile::tempdir().unwrap();
    let path = export_representative(&rep(Tensor64::full(&[28, 28, 1], 0.5), 3), 7, 2, dir.path()).unwrap();
    assert_eq!(path.file_name().unwrap(), "r0007_c002_l3.pgm");
    let bytes = std::fs::read(path).unwrap();
    let header = b"P5\n28 28\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    let body = &bytes[header.len()..];
    assert_eq!(body.len(), 784);
    assert!(body.iter().all(|&b| b == 127));
}

#[test]
fn flat_export_is_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f64> = (0..19).map(|i| i as f64 / 18.0).collect();
    let path = export_representative(
        &rep(Tensor64::new(vec![19], values.clone()).unwrap(), 4),
        1,
        0,
        dir.path(),
    )
    .unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let fields: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(fields.len(), 20);
    assert_eq!(fields[19], "4");
    for (f, v) in fields.iter().zip(&values) {
        assert_eq!(f.parse::<f64>().unwrap(), *v);
    }
}

#[test]
fn smoke_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw = seg_config("rep-central", dir.path(), 3);
    raw.set("export_reps", "true").unwrap();
    raw.set("export_every", "2").unwrap();
    let outcome = run(&RunSpec::resolve(&raw, None).unwrap()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER.join(","));
    assert_eq!(lines.len(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["final_accuracy"].as_f64().is_some());
    assert_eq!(summary["config"]["rounds"], "3");
    assert_eq!(summary["config"]["budget"], (0.1 * 19f64.sqrt()).to_string());
    assert_eq!(summary["train_samples"], 1848);
    assert_eq!(summary["test_samples"], 462);
    let loaded: repfuse::ModelState64 = repfuse::models::checkpoint::load(&dir.path().join("model.ckpt")).unwrap();
    assert_eq!(&loaded, &outcome.model);
    // exported on round 1 and round 2, never round 3
    let names: Vec<String> = std::fs::read_dir(dir.path().join("reps"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.iter().any(|n| n.starts_with("r0001_c000_")));
    assert!(names.iter().any(|n| n.starts_with("r0002_c000_")));
    assert!(names.iter().all(|n| !n.starts_with("r0003") && n.ends_with(".csv")));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for mode in ["baseline-central", "rep-distributed"] {
        let mut outs = Vec::new();
        for dir in [a.path(), b.path()] {
            let mut raw = seg_config(mode, dir, 2);
            if mode == "rep-distributed" {
                raw.set("clients", "3").unwrap();
                raw.set("per_client", "60").unwrap();
            }
            run(&RunSpec::resolve(&raw, None).unwrap()).unwrap();
            outs.push(std::fs::read(dir.join("metrics.csv")).unwrap());
        }
        assert_eq!(outs[0], outs[1], "{mode}");
    }
    assert!(a.path().join("shards.csv").exists());
}

#[test]
fn merged_comparison_schema() {
    let dir = tempfile::tempdir().unwrap();
    let specs = [("base", "baseline-central"), ("rep", "rep-central")];
    let outcomes: Vec<_> = specs
        .iter()
        .map(|(name, mode)| {
            let raw = seg_config(mode, &dir.path().join(name), 2);
            (name.to_string(), run(&RunSpec::resolve(&raw, None).unwrap()).unwrap())
        })
        .collect();
    let refs: Vec<_> = outcomes.iter().map(|(n, o)| (n.clone(), o)).collect();
    let mut buf = Vec::new();
    write_comparison(&refs, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let expected = "run,mode,round,train_loss,test_accuracy,matching_loss,tau_norm";
    assert_eq!(compare_header().join(","), expected);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], expected);
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("base,baseline-central,1,"));
    assert!(lines[1].ends_with(",,"));
    assert!(lines[4].starts_with("rep,rep-central,2,"));
    assert!(!lines[4].ends_with(",,"));
    for l in &lines {
        assert_eq!(l.split(',').count(), 7);
    }
}

fn repfuse() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_repfuse"));
    c.env_remove("REPFUSE_SEED");
    c
}

#[test]
fn flag_overrides_file_and_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# echo fixture\nmode=baseline-central\ndataset=csv\ncsv={}\nrounds=5\nseed=3\nout={}\n",
            segment().display(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let status = repfuse()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--rounds", "2", "--set", "eta_w=0.002"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["rounds"], "2");
    assert_eq!(summary["config"]["seed"], "3");
    assert_eq!(summary["config"]["eta_w"], "0.002");
    assert_eq!(summary["config"]["batch"], "50");
    let csv = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = repfuse()
        .env("REPFUSE_SEED", "11")
        .args([
            "run",
            "--mode",
            "baseline-central",
            "--dataset",
            "csv",
            "--rounds",
            "1",
            "--csv",
        ])
        .arg(segment())
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], "11");
}

#[test]
fn failures_exit_by_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = repfuse().args(["run", "--set", "learning_rate=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("valid keys"));

    let out = repfuse()
        .args([
            "run",
            "--mode",
            "rep-central",
            "--dataset",
            "csv",
            "--eta-w",
            "abc",
            "--csv",
            "x.csv",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eta_w"));

    let out = repfuse()
        .args([
            "run",
            "--mode",
            "rep-central",
            "--dataset",
            "csv",
            "--csv",
            "/nonexistent.csv",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn compare_subcommand_merges() {
    let dir = tempfile::tempdir().unwrap();
    for (name, mode) in [("a", "baseline-central"), ("b", "fedavg")] {
        let mut text = format!(
            "mode={mode}\ndataset=csv\ncsv={}\nrounds=2\nout={}\n",
            segment().display(),
            dir.path().join(name).display()
        );
        if mode == "fedavg" {
            text.push_str("clients=2\nper_client=100\n");
        }
        std::fs::write(dir.path().join(format!("{name}.cfg")), text).unwrap();
    }
    let merged = dir.path().join("merged.csv");
    let out = repfuse()
        .arg("compare")
        .arg(dir.path().join("a.cfg"))
        .arg(dir.path().join("b.cfg"))
        .arg("--out")
        .arg(&merged)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(merged).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(3).unwrap().starts_with("b,fedavg,1,"));
}
