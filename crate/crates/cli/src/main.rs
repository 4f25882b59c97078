use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairrank::Result;
use fairrank_cli::commands::{
    cmd_compare, cmd_evaluate, cmd_generate, cmd_sweep, cmd_train, compare_table,
};
use fairrank_cli::config::ExperimentConfig;
use fairrank_cli::exit_code;

#[derive(Parser)]
#[command(name = "fairrank", version, about = "Fairness-aware news ranking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (news.tsv, behaviors.tsv, meta.json).
    Generate(Common),
    /// Train one model and write its checkpoint and epoch log.
    Train(Common),
    /// Evaluate a checkpoint and print the metrics report.
    Evaluate(Common),
    /// Train and evaluate FairRank for each configured lambda.
    Sweep(Common),
    /// Train and evaluate every mode over several seeds.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file, or a run manifest to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Any config key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    /// Defaults, then the config file, then command-line flags.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                fairrank::Error::Config(format!("--set expects KEY=VALUE, got {kv:?}"))
            })?;
            c.set(k, v)?;
        }
        let path = |p: &PathBuf| p.display().to_string();
        for (key, value) in [
            ("seed", self.seed.map(|s| s.to_string())),
            ("mode", self.mode.clone()),
            ("lambda", self.lambda.map(|l| l.to_string())),
            ("dataset", self.dataset.as_ref().map(path)),
            ("checkpoint", self.checkpoint.as_ref().map(path)),
            ("out", self.out.as_ref().map(path)),
        ] {
            if let Some(v) = value {
                c.set(key, &v)?;
            }
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let out = cmd_generate(&a.resolve()?)?;
            println!("wrote dataset to {}", out.display());
        }
        Command::Train(a) => {
            let c = a.resolve()?;
            let ckpt = cmd_train(&c)?;
            println!(
                "trained {} (best epoch {}), checkpoint in {}",
                ckpt.mode,
                ckpt.best_epoch,
                c.out.display()
            );
        }
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&a.resolve()?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep(a) => {
            let c = a.resolve()?;
            for (lambda, s) in cmd_sweep(&c)? {
                let show = |m: &str| s.mean(m).map_or("n/a".into(), |v| format!("{v:.4}"));
                println!(
                    "lambda={lambda} auc={} acc_at_10={} failures={}",
                    show("auc"),
                    show("acc_at_10"),
                    s.failures
                );
            }
        }
        Command::Compare(a) => {
            let c = a.resolve()?;
            print!("{}", compare_table(&cmd_compare(&c)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
