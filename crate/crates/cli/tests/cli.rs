mod common;

use std::path::Path;

use common::{cli, write_run, BlockDataset};
use crossgr::kernel::checkpoint::load_params;
use crossgr::model::CrossGr;
use crossgr_cli::{commands, RunConfig};
use serde_json::Value;

const T1: &str = "a\tx\t5\na\ty\t4\nb\ty\t3\nb\tz\t5\nc\tx\t2\nc\tz\t4\nc\tw\t5\n";
const S1: &str = "p\tx\t4\np\tv\t5\nq\ty\t1\n";

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn arg(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn block(items: usize) -> String {
    BlockDataset {
        items,
        ..BlockDataset::default()
    }
    .tsv()
}

#[test]
fn stats_lists_markets_and_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run(
        dir.path(),
        "t1",
        &[("t1", T1.into()), ("s1", S1.into())],
        "",
    );
    let (code, out, err) = cli(&["--config", arg(&config), "stats"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("t1") && out.contains("s1"));
    let stats = read_json(&dir.path().join("runs/run/stats.json"));
    assert_eq!(stats["markets"].as_array().unwrap().len(), 2);
    let overlaps = stats["overlaps"].as_array().unwrap();
    assert_eq!(overlaps.len(), 1);
    // x and y appear in both markets
    assert_eq!(overlaps[0]["shared_items"], 2, "{overlaps:?}");
}

#[test]
fn missing_data_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run(dir.path(), "t1", &[("t1", T1.into())], "");
    std::fs::remove_file(dir.path().join("t1.tsv")).unwrap();
    let (code, _, err) = cli(&["--config", arg(&config), "train"]);
    assert_eq!(code, 2);
    assert!(err.contains("t1.tsv"), "{err}");

    let (code, _, _) = cli(&["--config", arg(&dir.path().join("absent.toml")), "stats"]);
    assert_eq!(code, 2);
}

#[test]
fn help_exits_zero() {
    let (code, out, _) = cli(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("compare"));
    let (code, _, err) = cli(&["frobnicate"]);
    assert_eq!(code, 2);
    assert!(!err.is_empty());
}

#[test]
fn zero_learning_rate_keeps_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run(
        dir.path(),
        "t1",
        &[("t1", block(100))],
        "[train]\nlearning_rate = 0.0\n",
    );
    let (code, _, err) = cli(&[
        "--config",
        arg(&config),
        "train",
        "--model",
        "crossgr",
        "--epochs",
        "2",
    ]);
    assert_eq!(code, 0, "{err}");

    let run = dir.path().join("runs/run");
    for file in [
        "config.toml",
        "epochs.log",
        "checkpoint.bin",
        "checkpoint.json",
    ] {
        assert!(run.join(file).is_file(), "{file} missing");
    }
    // epoch 0 plus two training epochs
    let log = std::fs::read_to_string(run.join("epochs.log")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let mut rc = RunConfig::load(&config).unwrap();
    rc.apply(&Default::default());
    let prepared = commands::prepare(&rc).unwrap();
    let fresh = CrossGr::new(rc.model.crossgr.clone(), &prepared.graph, rc.train.seed).unwrap();
    let saved = load_params(run.join("checkpoint.bin")).unwrap();
    let init = fresh.store().params();
    assert_eq!(saved.params().len(), init.len());
    for (a, b) in saved.params().iter().zip(init) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value, "{} moved", a.name);
    }
}

#[test]
fn eval_rejects_checkpoint_from_other_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run(dir.path(), "t1", &[("t1", block(100))], "");
    let (code, _, err) = cli(&["--config", arg(&config), "train", "--model", "itemcf"]);
    assert_eq!(code, 0, "{err}");
    let (code, _, err) = cli(&["--config", arg(&config), "eval"]);
    assert_eq!(code, 0, "{err}");

    let mut data = block(100);
    data.push_str("stranger\tp3\t5\nstranger\tp4\t5\nstranger\tp5\t4\n");
    std::fs::write(dir.path().join("t1.tsv"), data).unwrap();
    let (code, _, err) = cli(&["--config", arg(&config), "eval"]);
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("mismatch"), "{err}");

    let (code, _, _) = cli(&["--config", arg(&config), "--seed", "9", "eval"]);
    assert_eq!(code, 4);
}

#[test]
fn random_checkpoint_evaluates_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    // 400 items leave every user at least 99 unseen negatives
    let config = write_run(
        dir.path(),
        "t1",
        &[("t1", block(400))],
        "[eval]\nks = [10]\n",
    );
    let (code, _, err) = cli(&["--config", arg(&config), "train", "--model", "random"]);
    assert_eq!(code, 0, "{err}");
    let (code, out, err) = cli(&["--config", arg(&config), "eval"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("random"));

    let report = read_json(&dir.path().join("runs/run/report.json"));
    let entries = report["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["truncated_users"], 0);
    let hr = entries[0]["hr"][0].as_f64().unwrap();
    // 200 users, sd of HR about 0.021
    assert!((hr - 0.1).abs() < 0.07, "random HR@10 {hr}");
}

fn strip_timing(mut report: Value) -> Value {
    for entry in report["entries"].as_array_mut().unwrap() {
        entry.as_object_mut().unwrap().remove("wall_clock_ms");
    }
    report
}

#[test]
fn compare_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run(dir.path(), "t1", &[("t1", block(100))], "");
    let mut reports = Vec::new();
    for _ in 0..2 {
        let (code, out, err) = cli(&[
            "--config",
            arg(&config),
            "compare",
            "--model",
            "itemcf,usercf",
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("itemcf") && out.contains("usercf"));
        let run = dir.path().join("runs/run");
        assert!(run.join("itemcf/checkpoint.json").is_file());
        assert!(run.join("usercf/checkpoint.json").is_file());
        let report = read_json(&run.join("report.json"));
        assert_eq!(report["entries"].as_array().unwrap().len(), 2);
        reports.push(strip_timing(report));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn compare_without_models_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run(dir.path(), "t1", &[("t1", T1.into())], "models = []\n");
    let (code, _, err) = cli(&["--config", arg(&config), "compare"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn diverging_model_gives_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run(
        dir.path(),
        "t1",
        &[("t1", block(100))],
        "[train]\nlearning_rate = 1e300\nmax_epochs = 3\npatience = 3\n",
    );
    let (code, out, err) = cli(&["--config", arg(&config), "compare", "--model", "itemcf,gmf"]);
    assert_eq!(code, 5, "{err}");
    assert!(err.contains("1 of 2"), "{err}");
    assert!(out.contains("itemcf"));
    let report = read_json(&dir.path().join("runs/run/report.json"));
    assert_eq!(report["entries"].as_array().unwrap().len(), 1);
}

#[test]
fn train_requires_one_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run(dir.path(), "t1", &[("t1", T1.into())], "");
    let (code, _, _) = cli(&["--config", arg(&config), "train", "--model", "gmf,mlp"]);
    assert_eq!(code, 2);
}
