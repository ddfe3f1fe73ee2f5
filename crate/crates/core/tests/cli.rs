//! End-to-end runs of the `nxkt` binary on a copy of the synthetic corpus.

use std::path::Path;
use std::process::{Command, Output};

fn nxkt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nxkt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A temp dir holding `data/experiment.toml` with outputs under `out/`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = nxkt(dir.path(), &["synth", "--out", "data", "--output-dir", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

const CFG: &str = "data/experiment.toml";

#[test]
fn full_pipeline_then_everything_is_up_to_date() {
    let dir = workspace();
    let quick = ["-c", CFG, "--epochs", "1", "--seeds", "0"];
    let o = nxkt(dir.path(), &[&quick[..], &["all"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    for rel in [
        "kb.jsonl",
        "stats.json",
        "vocab.txt",
        "examples/completion.jsonl",
        "runs/seed-0/theta_k.ckpt",
        "runs/seed-0/curve-theta_kq.csv",
        "baseline/report.json",
    ] {
        assert!(out.join(rel).exists(), "missing {rel}");
    }
    assert!(std::fs::read_dir(out.join("eval")).unwrap().next().is_some());

    for cmd in ["ingest", "gen", "train", "eval", "baseline"] {
        let o = nxkt(dir.path(), &[&quick[..], &[cmd]].concat());
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        assert!(stdout(&o).contains("up to date"), "{cmd} reran: {}", stdout(&o));
    }

    // A changed hyperparameter invalidates training but not ingestion.
    let o = nxkt(dir.path(), &["-c", CFG, "--epochs", "2", "--seeds", "0", "ingest"]);
    assert!(stdout(&o).contains("up to date"));
    let o = nxkt(dir.path(), &["-c", CFG, "--epochs", "2", "--seeds", "0", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stdout(&o).contains("up to date"));

    let o = nxkt(dir.path(), &[&quick[..], &["report"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("report/curves.gp").exists());
}

#[test]
fn missing_inputs_name_the_producing_command() {
    let dir = workspace();
    let o = nxkt(dir.path(), &["-c", CFG, "eval"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("missing artifact") && err.contains("nxkt"), "{err}");

    let o = nxkt(dir.path(), &["-c", "nope.toml", "stats"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope.toml"));
}

#[test]
fn bad_configuration_is_reported_by_field() {
    let dir = workspace();
    let o = nxkt(
        dir.path(),
        &["-c", CFG, "--set", "stages.knowledge.learning_rate=-1", "stats"],
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));

    let o = nxkt(dir.path(), &["-c", CFG, "--set", "no_such_field=1", "stats"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no_such_field"), "{}", stderr(&o));

    std::fs::remove_dir_all(dir.path().join("data/tables")).unwrap();
    let o = nxkt(dir.path(), &["-c", CFG, "ingest"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("knowledge.tables"), "{}", stderr(&o));
}
