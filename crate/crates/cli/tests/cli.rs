use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn top(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_top"))
        .env_remove("TOP_OUT_DIR")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn top")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_SUITE: &[&str] = &[
    "suite",
    "--nodes",
    "4,6",
    "--dt",
    "120",
    "--dts",
    "120,240",
    "--dt-sweep-nodes",
    "4",
    "--days",
    "2",
    "--epochs",
    "5",
    "--bench-decisions",
    "3",
    "--bench-repetitions",
    "1",
    "--seed",
    "7",
];

fn strip_seconds(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != 2)
                .map(|(_, c)| c)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn suite_writes_all_tables_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = top(dir.path(), SMALL_SUITE);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "rewards_weekly.csv",
        "ablation_nodes.csv",
        "ablation_dt.csv",
        "bench_runtime.csv",
    ] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.lines().count() > 1, "{f} has no rows");
    }
    let prov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("provenance.json")).unwrap())
            .unwrap();
    assert_eq!(prov["config"]["subcommand"], "suite");
    assert_eq!(prov["config"]["seed"], 7);
    assert!(prov["argv"]
        .as_array()
        .unwrap()
        .iter()
        .any(|a| a == "--nodes"));
}

#[test]
fn suite_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(top(a.path(), SMALL_SUITE).status.success());
    assert!(top(b.path(), SMALL_SUITE).status.success());
    for f in [
        "rewards_weekly.csv",
        "ablation_nodes.csv",
        "ablation_dt.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let bench = |d: &Path| strip_seconds(&fs::read_to_string(d.join("bench_runtime.csv")).unwrap());
    assert_eq!(bench(a.path()), bench(b.path()));
}

#[test]
fn synth_label_train_rollout_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |o: Output| assert!(o.status.success(), "{}", stderr(&o));
    ok(top(
        &d.join("w"),
        &["synth", "-n", "6", "--horizon", "20000", "--seed", "3"],
    ));
    let world = d.join("w");
    let world = world.to_str().unwrap();
    ok(top(
        &d.join("l"),
        &["label", "--world", world, "--dt", "120"],
    ));
    let ds = d.join("l/dataset.csv");
    ok(top(
        &d.join("m"),
        &["train", "--dataset", ds.to_str().unwrap(), "--epochs", "5"],
    ));
    let report = fs::read_to_string(d.join("m/train_report.csv")).unwrap();
    assert!(report.starts_with("epoch,train_loss,val_loss,val_accuracy"));
    let model = d.join("m/model.bin");
    for policy in ["greedy", "aco", "fcfs", "dnn", "random"] {
        let out = d.join(format!("r_{policy}"));
        ok(top(
            &out,
            &[
                "rollout",
                "--world",
                world,
                "--policy",
                policy,
                "--model",
                model.to_str().unwrap(),
                "--t-end",
                "20000",
            ],
        ));
        let csv = fs::read_to_string(out.join("rollout.csv")).unwrap();
        assert!(csv.starts_with("t,officer,chosen,arrival,caught"));
        assert!(out.join("provenance.json").exists());
    }
}

#[test]
fn labelling_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = [
        "label",
        "--synth-nodes",
        "5",
        "--world-seed",
        "2",
        "--world-horizon",
        "10000",
        "--dt",
        "60",
        "--positions",
        "2",
        "--seed",
        "4",
    ];
    assert!(top(a.path(), &args).status.success());
    assert!(top(b.path(), &args).status.success());
    assert_eq!(
        fs::read(a.path().join("dataset.csv")).unwrap(),
        fs::read(b.path().join("dataset.csv")).unwrap()
    );
}

#[test]
fn missing_dataset_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = top(
        dir.path(),
        &["train", "--dataset", missing.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"), "{}", stderr(&o));
}

#[test]
fn malformed_events_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w");
    assert!(top(&w, &["synth", "-n", "3", "--horizon", "3600"])
        .status
        .success());
    fs::write(
        w.join("events.csv"),
        "node_id,violation_start,violation_end\n0,100,abc\n",
    )
    .unwrap();
    let o = top(
        &dir.path().join("r"),
        &["rollout", "--world", w.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("events.csv"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(top(dir.path(), &["--bogus"]).status.code(), Some(1));
    assert_eq!(
        top(dir.path(), &["rollout"]).status.code(),
        Some(1),
        "a world source is required"
    );
    assert_eq!(
        top(
            dir.path(),
            &["rollout", "--synth-nodes", "4", "--policy", "dijkstra"]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        top(
            dir.path(),
            &["rollout", "--synth-nodes", "4", "--policy", "dnn"]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        top(dir.path(), &["bench", "--repetitions", "0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(top(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn out_dir_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_top"))
        .env("TOP_OUT_DIR", dir.path())
        .args(["synth", "-n", "3", "--horizon", "3600"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("nodes.csv").exists());
    assert!(dir.path().join("events.csv").exists());
}
