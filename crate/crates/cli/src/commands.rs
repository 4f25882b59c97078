//! Subcommand implementations, callable as a library.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fairrank::data::{
    generate_synthetic, load_dataset, split_dataset, write_dataset, Dataset, DatasetMeta,
};
use fairrank::evaluation::{evaluate, MetricsReport, Provenance};
use fairrank::model::{ModelConfig, ModelParams, Ranker};
use fairrank::training::{fit_with_callback, Mode, TrainOutcome, TrainingConfig};
use fairrank::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::manifest::{write_file, ManifestWriter};

/// Trained parameters plus what is needed to evaluate them later.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub mode: Mode,
    pub lambda: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub vocab_fingerprint: String,
    pub model_config: ModelConfig,
    pub params: ModelParams,
}

/// Evaluation worker count: `FAIRRANK_THREADS` when set, else the machine's
/// parallelism. Results do not depend on it.
pub fn eval_threads() -> usize {
    std::env::var("FAIRRANK_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|n: &usize| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

fn dataset_files(config: &ExperimentConfig) -> Result<(PathBuf, PathBuf)> {
    let dir = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given; pass --dataset DIR".into()))?;
    let files = (dir.join("news.tsv"), dir.join("behaviors.tsv"));
    for f in [&files.0, &files.1] {
        if !f.is_file() {
            return Err(Error::Config(format!("dataset file {} does not exist", f.display())));
        }
    }
    Ok(files)
}

/// Loads the configured dataset and tags its train/validation/test splits.
pub fn load_split(config: &ExperimentConfig) -> Result<Dataset> {
    let (news, behaviors) = dataset_files(config)?;
    split_dataset(
        load_dataset(&news, &behaviors)?,
        config.train_ratio,
        config.val_ratio,
        config.split_order,
        config.split_seed,
    )
}

/// Config with relative paths made absolute so a manifest replays from any
/// working directory.
fn resolved(config: &ExperimentConfig) -> ExperimentConfig {
    let mut c = config.clone();
    c.dataset = c.dataset.as_deref().map(absolute);
    c.checkpoint = c.checkpoint.as_deref().map(absolute);
    c.out = absolute(&c.out);
    c
}

fn seeds(config: &ExperimentConfig) -> BTreeMap<String, u64> {
    [
        ("seed", config.training.seed),
        ("split_seed", config.split_seed),
        ("probe_seed", config.probe.probe_seed),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Runs `body` under a manifest at `out/<command>.manifest.json`, marking it
/// failed if the body errors.
fn with_manifest<T>(
    config: &ExperimentConfig,
    command: &str,
    inputs: &[PathBuf],
    body: impl FnOnce(&mut ManifestWriter) -> Result<T>,
) -> Result<T> {
    let config = resolved(config);
    let mut writer = ManifestWriter::start(
        config.out.join(format!("{command}.manifest.json")),
        command,
        config.to_flat(),
        seeds(&config),
        inputs,
    )?;
    match body(&mut writer) {
        Ok(v) => {
            writer.finish()?;
            Ok(v)
        }
        Err(e) => {
            writer.fail(&e)?;
            Err(e)
        }
    }
}

/// Writes `news.tsv`, `behaviors.tsv` and `meta.json` into `out`.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<PathBuf> {
    config.synth.validate()?;
    let dataset = generate_synthetic(&config.synth)?;
    let out = config.out.clone();
    let meta = DatasetMeta {
        synth: config.synth.clone(),
        seed: config.synth.seed,
    };
    write_dataset(&out, &dataset, Some(&meta))?;
    Ok(out)
}

pub fn train_on(dataset: &Dataset, training: &TrainingConfig) -> Result<TrainOutcome> {
    fit_with_callback(dataset, training, |_| Ok(()))
}

pub fn evaluate_outcome(
    dataset: &Dataset,
    config: &ExperimentConfig,
    training: &TrainingConfig,
    params: &ModelParams,
    model_config: &ModelConfig,
) -> Result<MetricsReport> {
    let ranker = Ranker::new(params, model_config, &dataset.news, training.mode.user_model())?;
    evaluate(
        &ranker,
        dataset,
        &config.probe,
        &Provenance {
            mode: training.mode.to_string(),
            lambda: training.lambda,
            seed: training.seed,
        },
        eval_threads(),
    )
}

/// Trains one model; writes `checkpoint.json` and `epochs.jsonl` to `out`.
pub fn cmd_train(config: &ExperimentConfig) -> Result<Checkpoint> {
    let (news, behaviors) = dataset_files(config)?;
    with_manifest(config, "train", &[news, behaviors], |manifest| {
        let dataset = load_split(config)?;
        let mut epochs = String::new();
        let outcome = fit_with_callback(&dataset, &config.training, |record| {
            epochs.push_str(&serde_json::to_string(record)?);
            epochs.push('\n');
            Ok(())
        });
        let log_path = config.out.join("epochs.jsonl");
        write_file(&log_path, &epochs)?;
        manifest.record_artifact(&log_path)?;
        let outcome = outcome?;
        let checkpoint = Checkpoint {
            mode: config.training.mode,
            lambda: config.training.lambda,
            seed: config.training.seed,
            best_epoch: outcome.best_epoch,
            vocab_fingerprint: dataset.vocab_fingerprint(),
            model_config: outcome.model_config,
            params: outcome.params,
        };
        let path = config.out.join("checkpoint.json");
        write_file(&path, &serde_json::to_string(&checkpoint)?)?;
        manifest.record_artifact(&path)?;
        Ok(checkpoint)
    })
}

const METRIC_COLUMNS: [&str; 4] = ["auc", "ndcg_at_10", "acc_at_10", "acc_at_20"];

fn metric(report: &MetricsReport, name: &str) -> Option<f64> {
    match name {
        "auc" => Some(report.auc),
        "ndcg_at_10" => Some(report.ndcg_at_10),
        "acc_at_10" => report.acc_at_10,
        "acc_at_20" => report.acc_at_20,
        _ => None,
    }
}

fn reports_csv(reports: &[MetricsReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Evaluates a checkpoint; writes `metrics.json` and `metrics.csv` to `out`.
pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<MetricsReport> {
    let checkpoint_path = config
        .checkpoint
        .clone()
        .unwrap_or_else(|| config.out.join("checkpoint.json"));
    let (news, behaviors) = dataset_files(config)?;
    if !checkpoint_path.is_file() {
        return Err(Error::Config(format!(
            "checkpoint {} does not exist",
            checkpoint_path.display()
        )));
    }
    let inputs = [news, behaviors, checkpoint_path.clone()];
    // Pin the checkpoint so a replay into another --out still finds it.
    let config = &ExperimentConfig {
        checkpoint: Some(checkpoint_path.clone()),
        ..config.clone()
    };
    with_manifest(config, "evaluate", &inputs, |manifest| {
        let text = std::fs::read_to_string(&checkpoint_path).map_err(|e| Error::Io {
            path: checkpoint_path.clone(),
            source: e,
        })?;
        let checkpoint: Checkpoint = serde_json::from_str(&text)?;
        let dataset = load_split(config)?;
        if dataset.vocab_fingerprint() != checkpoint.vocab_fingerprint {
            return Err(Error::Config(format!(
                "vocabulary mismatch: checkpoint {} was trained on vocabulary {}, dataset has {}",
                checkpoint_path.display(),
                checkpoint.vocab_fingerprint,
                dataset.vocab_fingerprint()
            )));
        }
        let training = TrainingConfig {
            mode: checkpoint.mode,
            lambda: checkpoint.lambda,
            seed: checkpoint.seed,
            ..config.training.clone()
        };
        let report = evaluate_outcome(
            &dataset,
            config,
            &training,
            &checkpoint.params,
            &checkpoint.model_config,
        )?;
        let json_path = config.out.join("metrics.json");
        write_file(&json_path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
        let csv_path = config.out.join("metrics.csv");
        write_file(&csv_path, &reports_csv(std::slice::from_ref(&report))?)?;
        manifest.record_artifact(&json_path)?;
        manifest.record_artifact(&csv_path)?;
        Ok(report)
    })
}

/// Outcome of one member run of a sweep or comparison.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub mode: Mode,
    pub lambda: f64,
    pub seed: u64,
    pub report: std::result::Result<MetricsReport, String>,
    pub seconds: f64,
}

fn run_member(dataset: &Dataset, config: &ExperimentConfig, training: TrainingConfig) -> RunResult {
    let started = std::time::Instant::now();
    let report = train_on(dataset, &training)
        .and_then(|o| evaluate_outcome(dataset, config, &training, &o.params, &o.model_config))
        .map_err(|e| e.to_string());
    RunResult {
        mode: training.mode,
        lambda: training.lambda,
        seed: training.seed,
        report,
        seconds: started.elapsed().as_secs_f64(),
    }
}

/// Mean and sample standard deviation; `None` when empty.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Per-metric mean and standard deviation over the successful runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub runs: usize,
    pub failures: usize,
    pub metrics: BTreeMap<String, (f64, f64)>,
    pub failure: String,
    /// Wall-clock seconds summed over the member runs.
    pub seconds: f64,
}

impl Summary {
    pub fn of(runs: &[&RunResult]) -> Self {
        let ok: Vec<&MetricsReport> = runs.iter().filter_map(|r| r.report.as_ref().ok()).collect();
        let metrics = METRIC_COLUMNS
            .iter()
            .filter_map(|m| {
                let v: Vec<f64> = ok.iter().filter_map(|r| metric(r, m)).collect();
                mean_std(&v).map(|s| (m.to_string(), s))
            })
            .collect();
        let failure = runs
            .iter()
            .filter_map(|r| r.report.as_ref().err().map(|e| format!("seed {}: {e}", r.seed)))
            .collect::<Vec<_>>()
            .join("; ");
        Self {
            runs: runs.len(),
            failures: runs.len() - ok.len(),
            metrics,
            failure,
            seconds: runs.iter().map(|r| r.seconds).sum(),
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|m| m.0)
    }
}

fn summary_header(first: &str) -> Vec<String> {
    let mut h = vec![first.to_string()];
    for m in METRIC_COLUMNS {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
    }
    h.extend(["runs", "failures", "failure"].map(String::from));
    h
}

fn summary_row(first: String, s: &Summary) -> Vec<String> {
    let mut row = vec![first];
    for m in METRIC_COLUMNS {
        match s.metrics.get(m) {
            Some((mean, std)) => {
                row.push(mean.to_string());
                row.push(std.to_string());
            }
            None => row.extend([String::new(), String::new()]),
        }
    }
    row.extend([s.runs.to_string(), s.failures.to_string(), s.failure.clone()]);
    row
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write_file(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_runs(path: &Path, results: &[RunResult]) -> Result<()> {
    let header: Vec<String> = ["mode", "lambda", "seed", "metric", "value"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for r in results {
        let Ok(report) = &r.report else { continue };
        for m in METRIC_COLUMNS {
            if let Some(v) = metric(report, m) {
                rows.push(vec![
                    r.mode.to_string(),
                    r.lambda.to_string(),
                    r.seed.to_string(),
                    m.to_string(),
                    v.to_string(),
                ]);
            }
        }
    }
    write_csv(path, &header, &rows)
}

fn member_seeds(config: &ExperimentConfig, count: usize) -> Vec<u64> {
    (0..count as u64).map(|s| config.training.seed + s).collect()
}

/// One FairRank run per λ and seed. Writes `sweep.csv` (one row per λ,
/// ascending) and the long-format `sweep_long.csv`.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<Vec<(f64, Summary)>> {
    if config.lambdas.len() < 2 {
        return Err(Error::Config("a sweep needs at least two lambda values".into()));
    }
    if let Some(l) = config.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::Config(format!("lambda must be a finite value >= 0, got {l}")));
    }
    let (news, behaviors) = dataset_files(config)?;
    with_manifest(config, "sweep", &[news, behaviors], |manifest| {
        let dataset = load_split(config)?;
        let mut lambdas = config.lambdas.clone();
        lambdas.sort_by(f64::total_cmp);
        let mut results = Vec::new();
        for &lambda in &lambdas {
            for seed in member_seeds(config, config.sweep_seeds) {
                let training = TrainingConfig {
                    mode: Mode::FairRank,
                    lambda,
                    seed,
                    ..config.training.clone()
                };
                results.push(run_member(&dataset, config, training));
            }
        }
        let summaries: Vec<(f64, Summary)> = lambdas
            .iter()
            .map(|&l| {
                let runs: Vec<&RunResult> = results.iter().filter(|r| r.lambda == l).collect();
                (l, Summary::of(&runs))
            })
            .collect();
        let path = config.out.join("sweep.csv");
        let rows: Vec<Vec<String>> = summaries
            .iter()
            .map(|(l, s)| summary_row(l.to_string(), s))
            .collect();
        write_csv(&path, &summary_header("lambda"), &rows)?;
        manifest.record_artifact(&path)?;
        let long = config.out.join("sweep_long.csv");
        write_runs(&long, &results)?;
        manifest.record_artifact(&long)?;
        Ok(summaries)
    })
}

/// Every mode over `compare_seeds` seeds. Writes `compare.csv`,
/// `compare.txt` and the long-format `compare_long.csv`.
pub fn cmd_compare(config: &ExperimentConfig) -> Result<Vec<(Mode, Summary)>> {
    let (news, behaviors) = dataset_files(config)?;
    with_manifest(config, "compare", &[news, behaviors], |manifest| {
        let dataset = load_split(config)?;
        let mut results = Vec::new();
        for mode in Mode::ALL {
            for seed in member_seeds(config, config.compare_seeds) {
                let training = TrainingConfig {
                    mode,
                    seed,
                    ..config.training.clone()
                };
                results.push(run_member(&dataset, config, training));
            }
        }
        let summaries: Vec<(Mode, Summary)> = Mode::ALL
            .iter()
            .map(|&m| {
                let runs: Vec<&RunResult> = results.iter().filter(|r| r.mode == m).collect();
                (m, Summary::of(&runs))
            })
            .collect();
        let path = config.out.join("compare.csv");
        let rows: Vec<Vec<String>> = summaries
            .iter()
            .map(|(m, s)| summary_row(m.to_string(), s))
            .collect();
        write_csv(&path, &summary_header("mode"), &rows)?;
        manifest.record_artifact(&path)?;
        let table = config.out.join("compare.txt");
        write_file(&table, &compare_table(&summaries))?;
        manifest.record_artifact(&table)?;
        let long = config.out.join("compare_long.csv");
        write_runs(&long, &results)?;
        manifest.record_artifact(&long)?;
        Ok(summaries)
    })
}

/// Aligned `mean ± std` table, one row per mode.
pub fn compare_table(summaries: &[(Mode, Summary)]) -> String {
    let mut cells: Vec<Vec<String>> = vec![std::iter::once("mode".to_string())
        .chain(METRIC_COLUMNS.iter().map(|m| m.to_string()))
        .collect()];
    for (mode, s) in summaries {
        let mut row = vec![mode.to_string()];
        for m in METRIC_COLUMNS {
            row.push(match s.metrics.get(m) {
                Some((mean, std)) => format!("{mean:.4} ± {std:.4}"),
                None => "n/a".to_string(),
            });
        }
        cells.push(row);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| {
                let pad = w - cell.chars().count();
                if i == 0 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
    }
    out
}
