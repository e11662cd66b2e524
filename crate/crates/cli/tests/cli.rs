use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gunlearn::io::{read_dataset, DatasetPaths};
use gunlearn::model::read_checkpoint;
use gunlearn::pipeline::{init_params, RunConfig};

const SMALL: &str = r#"{"data.n": 240, "data.p_in": 0.1, "data.p_out": 0.01, "model.epochs": 40, "unlearn.epochs": 5, "eval.rho": [0.1]}"#;

fn gunlearn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gunlearn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = gunlearn(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn failure(dir: &Path, args: &[&str]) -> String {
    let out = gunlearn(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(err.trim_end().lines().count(), 1, "multi-line error: {err}");
    err
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), config).unwrap();
    dir
}

fn pipeline(dir: &Path, out: &str) {
    for cmd in ["gen", "train", "unlearn", "retrain", "attack", "report"] {
        ok(dir, &["--config", "cfg.json", "--seed", "5", "--out", out, cmd]);
    }
}

#[test]
fn full_pipeline_is_bit_reproducible() {
    let dir = workspace(SMALL);
    pipeline(dir.path(), "a");
    pipeline(dir.path(), "b");
    for file in ["metrics.jsonl", "unlearned.guwt", "hie.csv", "unlearn_log.jsonl", "report.csv", "attack_mia.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let hie = fs::read_to_string(dir.path().join("a/hie.csv")).unwrap();
    assert!(hie.starts_with("node,score,round\n"));
    let metrics = fs::read_to_string(dir.path().join("a/metrics.jsonl")).unwrap();
    for stage in ["\"train\"", "\"unlearn\"", "\"retrain\"", "\"attack\""] {
        assert!(metrics.contains(stage), "no {stage} metrics");
    }
    assert!(dir.path().join("a/plots/auc_by_method.csv").exists());
}

#[test]
fn inputs_are_left_untouched() {
    let dir = workspace(SMALL);
    ok(dir.path(), &["--config", "cfg.json", "--out", "o", "gen"]);
    ok(dir.path(), &["--config", "cfg.json", "--out", "o", "train"]);
    let snapshot = |p: &str| fs::read(dir.path().join(p)).unwrap();
    let before: Vec<_> = ["o/data/edges.tsv", "o/data/features.gufm", "o/model.guwt"].iter().map(|p| snapshot(p)).collect();
    ok(dir.path(), &["--config", "cfg.json", "--out", "o", "unlearn"]);
    ok(dir.path(), &["--config", "cfg.json", "--out", "o", "retrain"]);
    let after: Vec<_> = ["o/data/edges.tsv", "o/data/features.gufm", "o/model.guwt"].iter().map(|p| snapshot(p)).collect();
    assert_eq!(before, after);
}

#[test]
fn frozen_finetune_copies_the_checkpoint() {
    let dir = workspace(r#"{"data.n": 200, "model.epochs": 20, "unlearn.lambda": 0.0, "unlearn.lr": 0.0}"#);
    for cmd in ["gen", "train", "unlearn"] {
        ok(dir.path(), &["--config", "cfg.json", "--out", "o", cmd]);
    }
    assert_eq!(fs::read(dir.path().join("o/model.guwt")).unwrap(), fs::read(dir.path().join("o/unlearned.guwt")).unwrap());
}

#[test]
fn zero_epochs_keep_the_initialization() {
    let dir = workspace(r#"{"data.n": 120, "model.epochs": 0}"#);
    ok(dir.path(), &["--config", "cfg.json", "--seed", "9", "--out", "o", "gen"]);
    ok(dir.path(), &["--config", "cfg.json", "--seed", "9", "--out", "o", "train"]);
    let graph = read_dataset(&DatasetPaths::in_dir(&dir.path().join("o/data"))).unwrap().graph;
    let cfg = RunConfig::from_json(r#"{"data.n": 120, "model.epochs": 0}"#).unwrap();
    let expected = init_params(&graph, &cfg, 9).unwrap();
    assert_eq!(read_checkpoint(&dir.path().join("o/model.guwt")).unwrap(), expected);
}

#[test]
fn seed_batches_merge_in_seed_order() {
    let dir = workspace(r#"{"data.n": 120, "model.epochs": 5}"#);
    ok(dir.path(), &["--config", "cfg.json", "--seeds", "0..3", "--out", "o", "gen"]);
    ok(dir.path(), &["--config", "cfg.json", "--seeds", "0..3", "--out", "o", "train"]);
    let merged = fs::read_to_string(dir.path().join("o/metrics.jsonl")).unwrap();
    let shards: String = (0..3)
        .map(|s| fs::read_to_string(dir.path().join(format!("o/seed-{s}/metrics.jsonl"))).unwrap())
        .collect();
    assert_eq!(merged, shards);
    let seeds: Vec<u64> = merged
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["seed"].as_u64().unwrap())
        .collect();
    assert!(seeds.windows(2).all(|w| w[0] <= w[1]));
    assert!(dir.path().join("o/seed-2/model.guwt").exists());
}

#[test]
fn errors_are_single_line_with_a_class() {
    let dir = workspace(SMALL);
    assert!(failure(dir.path(), &["--out", "missing", "train"]).starts_with("IoError: "));

    fs::write(dir.path().join("bad.json"), r#"{"unlearn.lambda": 2}"#).unwrap();
    assert!(failure(dir.path(), &["--config", "bad.json", "train"]).starts_with("ConfigError: "));

    ok(dir.path(), &["--config", "cfg.json", "--out", "o", "gen"]);
    ok(dir.path(), &["--config", "cfg.json", "--out", "o", "train"]);
    let test_node = fs::read_to_string(dir.path().join("o/data/test.txt")).unwrap().lines().next().unwrap().to_string();
    fs::write(dir.path().join("req.json"), format!(r#"{{"kind": "node", "nodes": [{test_node}]}}"#)).unwrap();
    fs::write(
        dir.path().join("cfg_req.json"),
        SMALL.replacen('{', r#"{"paths.request": "req.json", "#, 1),
    )
    .unwrap();
    assert!(failure(dir.path(), &["--config", "cfg_req.json", "--out", "o", "unlearn"]).starts_with("RequestError: "));

    // a checkpoint trained on another feature width
    let other = workspace(r#"{"data.n": 120, "data.feature_dim": 8, "model.epochs": 1}"#);
    ok(other.path(), &["--config", "cfg.json", "--out", "o", "gen"]);
    ok(other.path(), &["--config", "cfg.json", "--out", "o", "train"]);
    fs::copy(other.path().join("o/model.guwt"), dir.path().join("o/model.guwt")).unwrap();
    assert!(failure(dir.path(), &["--config", "cfg.json", "--out", "o", "unlearn"]).starts_with("CheckpointError: "));
}

#[test]
fn report_of_empty_metrics_is_header_only() {
    let dir = workspace("{}");
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    ok(dir.path(), &["--out", "o", "report", "empty.jsonl"]);
    assert_eq!(fs::read_to_string(dir.path().join("o/report.csv")).unwrap(), "stage,metric,count,mean,std\n");
}
