use std::path::Path;
use std::process::{Command, Output};

use glt::eval::Report;
use tempfile::TempDir;

fn glt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glt"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = glt(args, dir);
    assert_eq!(code(&out), 0, "glt {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Generates the default dataset and its ALT protocol splits in `dir`.
fn alt_workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(&["gen", "--out", "d.gltd", "--seed", "1"], dir.path());
    ok(&["split", "--data", "d.gltd", "--protocol", "alt", "--out", "alt"], dir.path());
    dir
}

#[test]
fn gen_is_deterministic_and_writes_the_magic() {
    let dir = TempDir::new().unwrap();
    ok(&["gen", "--out", "a.gltd", "--seed", "7"], dir.path());
    ok(&["gen", "--out", "b.gltd", "--seed", "7"], dir.path());
    ok(&["gen", "--out", "c.gltd", "--seed", "8"], dir.path());
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(&read("a.gltd")[..4], b"GLTD");
    assert_eq!(read("a.gltd"), read("b.gltd"));
    assert_ne!(read("a.gltd"), read("c.gltd"));
}

#[test]
fn missing_config_field_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("g.json"), r#"{"n_classes": 4}"#).unwrap();
    let out = glt(&["gen", "--config", "g.json", "--out", "x.gltd"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing field"));

    std::fs::write(dir.path().join("m.json"), r#"{"train": {"epoch": 3}}"#).unwrap();
    let out = glt(&["repro", "--config", "m.json", "--out", "r"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field `epoch`"));
}

#[test]
fn alt_pipeline_produces_a_report_and_guards_protocols() {
    let dir = alt_workspace();
    let p = dir.path();
    ok(
        &["train", "--split", "alt/train.json", "--method", "ifl2", "--epochs", "4", "--out", "m.ckpt"],
        p,
    );
    ok(
        &[
            "eval", "--model", "m.ckpt", "--split", "alt/test.json", "--strata", "alt/strata.json",
            "--train-split", "alt/train.json", "--report", "r.json",
        ],
        p,
    );
    let report = Report::read(&p.join("r.json")).unwrap();
    assert_eq!(report.entries.len(), 1);
    let e = &report.entries[0];
    assert!((0.0..=1.0).contains(&e.metrics.overall.accuracy));
    assert!(e.diagnostics.center_invariance.is_some());

    // a model trained under ALT may not be scored on another protocol's split
    ok(&["split", "--data", "d.gltd", "--protocol", "glt", "--out", "glt"], p);
    let out = glt(
        &["eval", "--model", "m.ckpt", "--split", "glt/test.json", "--strata", "glt/strata.json", "--report", "x.json"],
        p,
    );
    assert_eq!(code(&out), 3);
    // test splits are not training data
    let out = glt(&["train", "--split", "alt/test.json", "--epochs", "1", "--out", "bad.ckpt"], p);
    assert_eq!(code(&out), 3);
    let out = glt(
        &["train", "--split", "alt/train.json", "--protocol", "clt", "--epochs", "1", "--out", "bad.ckpt"],
        p,
    );
    assert_eq!(code(&out), 3);

    ok(&["report", "--inputs", "r.json", "--out", "t.csv"], p);
    let table = std::fs::read_to_string(p.join("t.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn ce_training_log_has_no_metric_loss() {
    let dir = alt_workspace();
    let p = dir.path();
    ok(&["train", "--split", "alt/train.json", "--method", "ce", "--epochs", "3", "--out", "ce.ckpt"], p);
    let log = std::fs::read_to_string(p.join("ce.ckpt.log.csv")).unwrap();
    let mut lines = log.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "loss_ifl").unwrap();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let v: f64 = row.split(',').nth(col).unwrap().parse().unwrap();
        assert_eq!(v, 0.0);
    }
}

#[test]
fn repro_is_reproducible_and_rejects_tampered_manifests() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("m.json"),
        r#"{"train": {"epochs": 3}, "methods": ["ce", "ifl2"], "protocols": ["clt"], "seeds": [0]}"#,
    )
    .unwrap();
    ok(&["repro", "--config", "m.json", "--out", "a"], p);
    ok(&["repro", "--manifest", "a/manifest.json", "--out", "b"], p);
    let read = |f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read("a/merged.csv"), read("b/merged.csv"));
    assert_eq!(read("a/runs.csv"), read("b/runs.csv"));

    let text = std::fs::read_to_string(p.join("a/manifest.json")).unwrap();
    let tampered = text.replacen("\"epochs\": 3", "\"epochs\": 4", 1);
    assert_ne!(tampered, text);
    std::fs::write(p.join("t.json"), tampered).unwrap();
    let out = glt(&["repro", "--manifest", "t.json", "--out", "c"], p);
    assert_eq!(code(&out), 2);
}
