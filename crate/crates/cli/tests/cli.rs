use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "num_users=200",
    "--set", "num_news=600",
    "--set", "d_tok=8",
    "--set", "d_cat=4",
    "--set", "d_h=8",
    "--set", "d_att=8",
    "--set", "d_d=4",
    "--set", "learning_rate=0.001",
    "--set", "pool_size=40",
    "--set", "probe_seeds=1",
    "--set", "probe_train_fraction=0.5",
];

fn fairrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairrank"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path) {
    let mut args = vec!["generate", "--out", s(dir)];
    args.extend_from_slice(SMALL);
    let out = fairrank(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn train(data: &Path, out: &Path, mode: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--dataset", s(data), "--out", s(out), "--mode", mode];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "epochs=2"]);
    args.extend_from_slice(extra);
    fairrank(&args)
}

fn epochs(out: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(out.join("epochs.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn generate_writes_configured_counts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a);
    generate(&b);
    for f in ["news.tsv", "behaviors.tsv", "meta.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let lines = |f: &str| std::fs::read_to_string(a.join(f)).unwrap().lines().count();
    assert_eq!(lines("news.tsv"), 600);
    // Five impressions per user by default.
    assert_eq!(lines("behaviors.tsv"), 1000);
}

#[test]
fn infeasible_generation_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fairrank(&[
        "generate",
        "--out",
        s(tmp.path()),
        "--set",
        "clicks_target=11",
        "--set",
        "items_per_impression=10",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn unwritable_output_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = fairrank(&["generate", "--out", s(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fairrank(&["train", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = fairrank(&["train", "--dataset", s(&tmp.path().join("nope")), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2() {
    let out = fairrank(&["generate", "--set", "colour=red"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn base_training_lowers_ranking_loss_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    generate(&data);
    let out = train(&data, &run, "base", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("checkpoint.json").is_file());
    let log = epochs(&run);
    assert_eq!(log.len(), 2);
    assert!(log[1]["L_R"].as_f64().unwrap() < log[0]["L_R"].as_f64().unwrap());

    let mut args = vec!["evaluate", "--dataset", s(&data), "--out", s(&run)];
    args.extend_from_slice(SMALL);
    let first = fairrank(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let report: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    for key in ["auc", "ndcg_at_10", "acc_at_10", "acc_at_20"] {
        assert!(report[key].is_number(), "{key} missing");
    }
    for key in ["acc_at_10", "acc_at_20"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    let second = fairrank(&args);
    assert_eq!(first.stdout, second.stdout);
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn fairrank_log_has_adversarial_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    generate(&data);
    let out = train(&data, &run, "FairRank", &["--lambda", "0.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for record in epochs(&run) {
        for key in ["epoch", "L_R", "L_A", "L_D", "L_total", "val_AUC"] {
            assert!(record.get(key).is_some(), "{key} missing");
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("train.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["config"]["mode"], "FairRank");
    assert!(manifest["artifacts"]["checkpoint.json"].is_string());
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    generate(&data);
    let out = train(&data, &run, "base", &["--set", "learning_rate=1e300"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn vocabulary_mismatch_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, other, run) = (
        tmp.path().join("data"),
        tmp.path().join("other"),
        tmp.path().join("run"),
    );
    generate(&data);
    let mut args = vec!["generate", "--out", s(&other)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "vocab_per_category=7"]);
    assert!(fairrank(&args).status.success());
    assert!(train(&data, &run, "base", &[]).status.success());
    let mut args = vec!["evaluate", "--dataset", s(&other), "--out", s(&run)];
    args.extend_from_slice(SMALL);
    let out = fairrank(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
}

#[test]
fn sweep_needs_two_lambdas() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let out = fairrank(&["sweep", "--dataset", s(&data), "--out", s(tmp.path()), "--set", "lambdas=0.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_and_compare_emit_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let run = tmp.path().join("sweep");
    let mut args = vec!["sweep", "--dataset", s(&data), "--out", s(&run)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "epochs=1", "--set", "lambdas=1,0,0.5,0.25,0.75"]);
    let out = fairrank(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(run.join("sweep.csv")).unwrap();
    let lambdas: Vec<f64> = reader
        .records()
        .map(|r| r.unwrap()[0].parse().unwrap())
        .collect();
    assert_eq!(lambdas, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    assert!(run.join("sweep_long.csv").is_file());

    let run = tmp.path().join("compare");
    let mut args = vec!["compare", "--dataset", s(&data), "--out", s(&run)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "epochs=1", "--set", "compare_seeds=2"]);
    let out = fairrank(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(run.join("compare.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    for m in ["auc", "ndcg_at_10", "acc_at_10", "acc_at_20"] {
        assert!(header.iter().any(|h| h == format!("{m}_mean")));
    }
    let modes: Vec<String> = reader.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(
        modes,
        ["two-tower", "base", "AL", "FairRank-no-invariant", "FairRank-no-KL", "FairRank"]
    );
    let table = std::fs::read_to_string(run.join("compare.txt")).unwrap();
    assert_eq!(table.lines().count(), 7);
}

#[test]
fn train_replays_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, a, b) = (tmp.path().join("data"), tmp.path().join("a"), tmp.path().join("b"));
    generate(&data);
    assert!(train(&data, &a, "AL", &[]).status.success());
    let manifest = a.join("train.manifest.json");
    let out = fairrank(&["train", "--config", s(&manifest), "--out", s(&b)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.json", "epochs.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
