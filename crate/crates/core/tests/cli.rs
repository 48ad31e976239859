use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cellflow"));
    c.env("CELLFLOW_THREADS", "2");
    c
}

fn arc_config(dir: &Path, extra_training: &str) -> PathBuf {
    let p = dir.join("arc.json");
    let text = format!(
        r#"{{
  "seed": 3,
  "data": {{ "source": "toy", "toy": "arc", "toy_cells": 60, "timepoints": 4 }},
  "geometry": {{ "method": "identity" }},
  "dynamics": {{ "hidden": [16, 16] }},
  "training": {{ "iterations": 60, "lr": 0.005, "batch_size": 32, "steps_per_unit": 5 {extra_training} }},
  "eval": {{ "branches": 1 }}
}}"#
    );
    fs::write(&p, text).unwrap();
    p
}

fn stage(stage: &str, config: &Path, out: &Path) -> (i32, String) {
    let o = bin()
        .args([stage, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    (
        o.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

fn pipeline(config: &Path, out: &Path) {
    for s in ["simulate", "embed", "train", "infer", "evaluate", "plot"] {
        let (code, err) = stage(s, config, out);
        assert_eq!(code, 0, "{s} failed: {err}");
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn arc_pipeline_runs_and_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = arc_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&cfg, &a);
    pipeline(&cfg, &b);
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    for want in [
        "expression.csv",
        "labels.csv",
        "manifest.json",
        "latent.csv",
        "autoencoder.json",
        "model.json",
        "loss_history.csv",
        "trajectories.jsonl",
        "metrics.csv",
        "plot.svg",
        "loss.svg",
        "config.simulate.json",
        "config.evaluate.json",
    ] {
        assert!(names.contains(&want), "missing {want}");
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("t,metric,value,seed,space"));
    assert!(lines.count() >= 9);
    let traj = fs::read_to_string(a.join("trajectories.jsonl")).unwrap();
    let svg = fs::read_to_string(a.join("plot.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let polylines = doc
        .descendants()
        .filter(|n| n.has_tag_name("polyline"))
        .count();
    assert_eq!(polylines, traj.lines().count());
}

#[test]
fn seed_override_changes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = arc_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(stage("simulate", &cfg, &a).0, 0);
    let o = bin()
        .args(["simulate", "--seed", "99", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_ne!(
        fs::read(a.join("expression.csv")).unwrap(),
        fs::read(b.join("expression.csv")).unwrap()
    );
    let echo = fs::read_to_string(b.join("config.simulate.json")).unwrap();
    assert!(echo.contains("\"seed\": 99"));
}

#[test]
fn trifurcation_preset_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("t.json");
    fs::write(
        &cfg,
        r#"{"seed": 1, "data": {"source": "trifurcation", "lineage": {"steps": 20}}}"#,
    )
    .unwrap();
    let out = tmp.path().join("o");
    let (code, err) = stage("simulate", &cfg, &out);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(out.join("expression.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 100);
    assert_eq!(lines.count(), 500);
}

#[test]
fn training_mode_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    for mode in ["local", "global"] {
        let cfg = arc_config(
            tmp.path(),
            &format!(r#", "mode": "{mode}", "iterations": 5"#),
        );
        let out = tmp.path().join(mode);
        for s in ["simulate", "embed", "train"] {
            assert_eq!(stage(s, &cfg, &out).0, 0);
        }
        let ck: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
        assert_eq!(ck["mode"], mode);
        assert_eq!(ck["version"], 1);
    }
}

#[test]
fn plot_without_trajectories_is_scatter_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = arc_config(tmp.path(), "");
    let out = tmp.path().join("o");
    assert_eq!(stage("simulate", &cfg, &out).0, 0);
    assert_eq!(stage("embed", &cfg, &out).0, 0);
    fs::write(out.join("trajectories.jsonl"), "").unwrap();
    assert_eq!(stage("plot", &cfg, &out).0, 0);
    let svg = fs::read_to_string(out.join("plot.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(
        doc.descendants()
            .filter(|n| n.has_tag_name("polyline"))
            .count(),
        0
    );
    assert_eq!(
        doc.descendants()
            .filter(|n| n.has_tag_name("circle"))
            .count(),
        240
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");

    // Missing config file.
    assert_eq!(stage("simulate", &tmp.path().join("nope.json"), &out).0, 3);

    // Seed is mandatory; unknown keys are rejected.
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"data": {}}"#).unwrap();
    assert_eq!(stage("simulate", &bad, &out).0, 2);
    fs::write(&bad, r#"{"seed": 1, "data": {"colour": 3}}"#).unwrap();
    assert_eq!(stage("simulate", &bad, &out).0, 2);

    // No output directory anywhere.
    let cfg = arc_config(tmp.path(), "");
    let o = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    // Upstream outputs missing.
    assert_eq!(stage("infer", &cfg, &tmp.path().join("empty")).0, 3);

    // Uncreatable output directory.
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_ne!(stage("simulate", &cfg, &blocker.join("sub")).0, 0);

    // Shape mismatch between latent and labels.
    assert_eq!(stage("simulate", &cfg, &out).0, 0);
    assert_eq!(stage("embed", &cfg, &out).0, 0);
    assert_eq!(stage("train", &cfg, &out).0, 0);
    let labels = fs::read_to_string(out.join("labels.csv")).unwrap();
    let short: Vec<&str> = labels.lines().take(labels.lines().count() - 1).collect();
    fs::write(out.join("labels.csv"), short.join("\n") + "\n").unwrap();
    assert_eq!(stage("infer", &cfg, &out).0, 5);
    fs::write(out.join("labels.csv"), labels).unwrap();

    // Malformed CSV.
    let latent = fs::read_to_string(out.join("latent.csv")).unwrap();
    fs::write(
        out.join("latent.csv"),
        latent.replacen('\n', "\nabc,1\n", 1),
    )
    .unwrap();
    assert_eq!(stage("infer", &cfg, &out).0, 5);
    fs::write(out.join("latent.csv"), &latent).unwrap();

    // Checkpoint version mismatch.
    let model = fs::read_to_string(out.join("model.json")).unwrap();
    fs::write(
        out.join("model.json"),
        model.replacen("\"version\": 1", "\"version\": 7", 1),
    )
    .unwrap();
    let (code, err) = stage("infer", &cfg, &out);
    assert_eq!(code, 6, "{err}");
    fs::write(out.join("model.json"), model).unwrap();
    assert_eq!(stage("infer", &cfg, &out).0, 0);

    // Numeric failure: squared distances overflow.
    let huge: String = latent
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 1 {
                "1e200,-1e200".to_string()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(out.join("latent.csv"), huge + "\n").unwrap();
    let (code, err) = stage("train", &cfg, &out);
    assert_eq!(code, 4, "{err}");
}
