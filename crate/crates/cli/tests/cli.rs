//! End-to-end tests of the `nextpoi` binary: exit codes, golden analysis
//! tables, and byte-level determinism of a full train/eval round trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nextpoi"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_flag_exits_1() {
    let out = run(&["selftest", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--definitely-not-a-flag"));
}

#[test]
fn eval_without_required_args_exits_1() {
    let out = run(&["eval"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ingest_of_garbage_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("bad.tsv");
    fs::write(&garbage, "this is not\na checkin file\n").unwrap();
    let out = run(&[
        "ingest",
        "--input",
        garbage.to_str().unwrap(),
        "--out",
        dir.path().join("ds.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_file_exits_2() {
    let out = run(&["analyze", "--dataset", "/nonexistent/ds.json", "--out-dir", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analysis_tables_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds.json");
    let out = run(&[
        "ingest",
        "--input",
        fixture("tiny.tsv").to_str().unwrap(),
        "--out",
        ds.to_str().unwrap(),
        "--k-regions",
        "2",
    ]);
    assert_success(&out);
    let analysis_dir = dir.path().join("analysis");
    let out = run(&[
        "analyze",
        "--dataset",
        ds.to_str().unwrap(),
        "--out-dir",
        analysis_dir.to_str().unwrap(),
    ]);
    assert_success(&out);

    let golden_dir = fixture("golden");
    let mut compared = 0;
    for entry in fs::read_dir(&golden_dir).unwrap() {
        let golden_path = entry.unwrap().path();
        let name = golden_path.file_name().unwrap();
        let produced = fs::read(analysis_dir.join(name)).unwrap();
        let golden = fs::read(&golden_path).unwrap();
        assert_eq!(
            produced,
            golden,
            "table {:?} differs from golden file",
            name
        );
        compared += 1;
    }
    assert_eq!(compared, 11);
}

/// Strips the wall-clock column (the only nondeterministic field) from the
/// training log.
fn strip_wall_seconds(log: &str) -> String {
    log.lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            cols.pop();
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("city.tsv");
    let out = run(&[
        "synth",
        "--out",
        tsv.to_str().unwrap(),
        "--users",
        "12",
        "--regions",
        "4",
        "--pois-per-region",
        "4",
        "--days",
        "8",
        "--seed",
        "5",
    ]);
    assert_success(&out);

    let mut artifacts: Vec<(String, Vec<u8>, Vec<u8>)> = Vec::new();
    let mut outputs: Vec<(PathBuf, PathBuf, PathBuf)> = Vec::new();
    for run_idx in 0..2 {
        let base = dir.path().join(format!("run{}", run_idx));
        fs::create_dir(&base).unwrap();
        let ds = base.join("ds.json");
        let out = run(&[
            "ingest",
            "--input",
            tsv.to_str().unwrap(),
            "--out",
            ds.to_str().unwrap(),
            "--k-regions",
            "4",
            "--seed",
            "5",
        ]);
        assert_success(&out);
        let train_dir = base.join("train");
        let out = run(&[
            "train",
            "--dataset",
            ds.to_str().unwrap(),
            "--out-dir",
            train_dir.to_str().unwrap(),
            "--embedding-size",
            "8",
            "--max-epochs",
            "3",
            "--batch-size",
            "64",
            "--seed",
            "5",
        ]);
        assert_success(&out);
        let results = base.join("results.json");
        let out = run(&[
            "eval",
            "--dataset",
            ds.to_str().unwrap(),
            "--checkpoint",
            train_dir.join("checkpoint.bin").to_str().unwrap(),
            "--out",
            results.to_str().unwrap(),
        ]);
        assert_success(&out);
        outputs.push((ds, train_dir, results));
    }

    let (ds_a, dir_a, res_a) = &outputs[0];
    let (ds_b, dir_b, res_b) = &outputs[1];
    artifacts.push((
        "dataset".into(),
        fs::read(ds_a).unwrap(),
        fs::read(ds_b).unwrap(),
    ));
    artifacts.push((
        "checkpoint".into(),
        fs::read(dir_a.join("checkpoint.bin")).unwrap(),
        fs::read(dir_b.join("checkpoint.bin")).unwrap(),
    ));
    artifacts.push((
        "results".into(),
        fs::read(res_a).unwrap(),
        fs::read(res_b).unwrap(),
    ));
    for (name, a, b) in &artifacts {
        assert_eq!(a, b, "{} differs between identical runs", name);
    }
    let log_a = fs::read_to_string(dir_a.join("train_log.csv")).unwrap();
    let log_b = fs::read_to_string(dir_b.join("train_log.csv")).unwrap();
    assert_eq!(strip_wall_seconds(&log_a), strip_wall_seconds(&log_b));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[ingest]\nk_regions = 2\nseed = 9\n").unwrap();
    let ds = dir.path().join("ds.json");
    let out = bin()
        .args([
            "ingest",
            "--config",
            cfg.to_str().unwrap(),
            "--input",
            fixture("tiny.tsv").to_str().unwrap(),
            "--out",
            ds.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_success(&out);
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ds.json.config.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["k_regions"], 2);
    assert_eq!(resolved["seed"], 9);

    // A flag beats the file.
    let out = bin()
        .args([
            "ingest",
            "--config",
            cfg.to_str().unwrap(),
            "--input",
            fixture("tiny.tsv").to_str().unwrap(),
            "--out",
            ds.to_str().unwrap(),
            "--seed",
            "11",
        ])
        .output()
        .unwrap();
    assert_success(&out);
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ds.json.config.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["seed"], 11);
}

#[test]
fn bad_config_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[ingest]\nnot_a_key = true\n").unwrap();
    let out = bin()
        .args([
            "analyze",
            "--config",
            cfg.to_str().unwrap(),
            "--dataset",
            "x.json",
            "--out-dir",
            "y",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
