//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fairrank::data::{SplitOrder, SynthConfig};
use fairrank::evaluation::ProbeConfig;
use fairrank::model::{EncoderKind, ScorerKind};
use fairrank::training::{Mode, TrainingConfig};
use fairrank::{Error, Result};

/// Everything a subcommand needs. Every field has a default; a config file
/// overrides defaults and command-line flags override the file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub training: TrainingConfig,
    pub probe: ProbeConfig,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub split_order: SplitOrder,
    pub split_seed: u64,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub lambdas: Vec<f64>,
    pub sweep_seeds: usize,
    pub compare_seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            training: TrainingConfig::default(),
            probe: ProbeConfig::default(),
            train_ratio: 0.81,
            val_ratio: 0.09,
            split_order: SplitOrder::Temporal,
            split_seed: 0,
            dataset: None,
            checkpoint: None,
            out: PathBuf::from("out"),
            lambdas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            sweep_seeds: 1,
            compare_seeds: 5,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| parse(key, v))
        .collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.synth;
        let t = &mut self.training;
        let a = &mut t.architecture;
        let p = &mut self.probe;
        match key.trim() {
            "seed" => {
                let seed = parse(key, v)?;
                s.seed = seed;
                t.seed = seed;
            }
            "num_users" => s.num_users = parse(key, v)?,
            "num_news" => s.num_news = parse(key, v)?,
            "num_categories" => s.num_categories = parse(key, v)?,
            "beta" => s.beta = parse(key, v)?,
            "history_len_min" => s.history_len_range.0 = parse(key, v)?,
            "history_len_max" => s.history_len_range.1 = parse(key, v)?,
            "impressions_per_user" => s.impressions_per_user = parse(key, v)?,
            "items_per_impression" => s.items_per_impression = parse(key, v)?,
            "clicks_target" => s.clicks_target = parse(key, v)?,
            "click_temperature" => s.click_temperature = parse(key, v)?,
            "vocab_per_category" => s.vocab_per_category = parse(key, v)?,
            "title_len_min" => s.title_len_range.0 = parse(key, v)?,
            "title_len_max" => s.title_len_range.1 = parse(key, v)?,
            "mode" => t.mode = v.parse::<Mode>()?,
            "lambda" => t.lambda = parse(key, v)?,
            "learning_rate" => t.learning_rate = parse(key, v)?,
            "adversary_lr_scale" => t.adversary_lr_scale = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "negatives" => t.negatives = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "d_tok" => a.d_tok = parse(key, v)?,
            "d_cat" => a.d_cat = parse(key, v)?,
            "d_h" => a.d_h = parse(key, v)?,
            "d_att" => a.d_att = parse(key, v)?,
            "d_d" => a.d_d = parse(key, v)?,
            "history_len" => a.history_len = parse(key, v)?,
            "max_title_len" => a.max_title_len = parse(key, v)?,
            "scorer" => {
                a.scorer = match v {
                    "inner-product" => ScorerKind::InnerProduct,
                    "feed-forward" => ScorerKind::FeedForward {
                        hidden: match a.scorer {
                            ScorerKind::FeedForward { hidden } => hidden,
                            ScorerKind::InnerProduct => a.d_h,
                        },
                    },
                    other => return Err(Error::Config(format!("unknown scorer {other:?}"))),
                }
            }
            "scorer_hidden" => {
                let hidden = parse(key, v)?;
                if let ScorerKind::FeedForward { hidden: h } = &mut a.scorer {
                    *h = hidden;
                }
            }
            "encoder" => a.encoder = v.parse::<EncoderKind>()?,
            "pool_size" => p.pool_size = parse(key, v)?,
            "k_values" => p.k_values = parse_list(key, v)?,
            "probe_train_fraction" => p.probe_train_fraction = parse(key, v)?,
            "probe_seed" => p.probe_seed = parse(key, v)?,
            "probe_seeds" => p.num_seeds = parse(key, v)?,
            "train_ratio" => self.train_ratio = parse(key, v)?,
            "val_ratio" => self.val_ratio = parse(key, v)?,
            "split_order" => {
                self.split_order = match v {
                    "temporal" => SplitOrder::Temporal,
                    "shuffled" => SplitOrder::Shuffled,
                    other => return Err(Error::Config(format!("unknown split_order {other:?}"))),
                }
            }
            "split_seed" => self.split_seed = parse(key, v)?,
            "dataset" => self.dataset = (!v.is_empty()).then(|| PathBuf::from(v)),
            "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "lambdas" => self.lambdas = parse_list(key, v)?,
            "sweep_seeds" => self.sweep_seeds = parse(key, v)?,
            "compare_seeds" => self.compare_seeds = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// The configuration as `key -> value` strings; [`ExperimentConfig::set`]
    /// applied to each entry reproduces it.
    pub fn to_flat(&self) -> BTreeMap<String, String> {
        let s = &self.synth;
        let t = &self.training;
        let a = &t.architecture;
        let p = &self.probe;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let mut m: BTreeMap<String, String> = [
            ("seed", t.seed.to_string()),
            ("num_users", s.num_users.to_string()),
            ("num_news", s.num_news.to_string()),
            ("num_categories", s.num_categories.to_string()),
            ("beta", s.beta.to_string()),
            ("history_len_min", s.history_len_range.0.to_string()),
            ("history_len_max", s.history_len_range.1.to_string()),
            ("impressions_per_user", s.impressions_per_user.to_string()),
            ("items_per_impression", s.items_per_impression.to_string()),
            ("clicks_target", s.clicks_target.to_string()),
            ("click_temperature", s.click_temperature.to_string()),
            ("vocab_per_category", s.vocab_per_category.to_string()),
            ("title_len_min", s.title_len_range.0.to_string()),
            ("title_len_max", s.title_len_range.1.to_string()),
            ("mode", t.mode.to_string()),
            ("lambda", t.lambda.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("adversary_lr_scale", t.adversary_lr_scale.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("negatives", t.negatives.to_string()),
            ("epochs", t.epochs.to_string()),
            ("d_tok", a.d_tok.to_string()),
            ("d_cat", a.d_cat.to_string()),
            ("d_h", a.d_h.to_string()),
            ("d_att", a.d_att.to_string()),
            ("d_d", a.d_d.to_string()),
            ("history_len", a.history_len.to_string()),
            ("max_title_len", a.max_title_len.to_string()),
            ("encoder", encoder_name(a.encoder).to_string()),
            ("pool_size", p.pool_size.to_string()),
            ("k_values", join(&p.k_values)),
            ("probe_train_fraction", p.probe_train_fraction.to_string()),
            ("probe_seed", p.probe_seed.to_string()),
            ("probe_seeds", p.num_seeds.to_string()),
            ("train_ratio", self.train_ratio.to_string()),
            ("val_ratio", self.val_ratio.to_string()),
            (
                "split_order",
                match self.split_order {
                    SplitOrder::Temporal => "temporal",
                    SplitOrder::Shuffled => "shuffled",
                }
                .to_string(),
            ),
            ("split_seed", self.split_seed.to_string()),
            ("dataset", path(&self.dataset)),
            ("checkpoint", path(&self.checkpoint)),
            ("out", self.out.display().to_string()),
            ("lambdas", join(&self.lambdas)),
            ("sweep_seeds", self.sweep_seeds.to_string()),
            ("compare_seeds", self.compare_seeds.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        match a.scorer {
            ScorerKind::InnerProduct => {
                m.insert("scorer".into(), "inner-product".into());
            }
            ScorerKind::FeedForward { hidden } => {
                m.insert("scorer".into(), "feed-forward".into());
                m.insert("scorer_hidden".into(), hidden.to_string());
            }
        }
        m
    }

    /// Applies a flat map. `scorer` goes first so `scorer_hidden` can refine it.
    pub fn apply_flat(&mut self, flat: &BTreeMap<String, String>) -> Result<()> {
        if let Some(v) = flat.get("scorer") {
            self.set("scorer", v)?;
        }
        for (k, v) in flat.iter().filter(|(k, _)| k.as_str() != "scorer") {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Reads a `key = value` file, or the `config` object of a run manifest
    /// when the file holds JSON.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if text.trim_start().starts_with('{') {
            let manifest: crate::manifest::RunManifest = serde_json::from_str(&text)?;
            return self.apply_flat(&manifest.config);
        }
        let mut flat = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                column: 1,
                message: "expected key = value".into(),
            })?;
            flat.insert(k.trim().to_string(), v.trim().to_string());
        }
        self.apply_flat(&flat)
    }
}

fn encoder_name(e: EncoderKind) -> &'static str {
    match e {
        EncoderKind::CandidateAttention => "candidate-attention",
        EncoderKind::Conv3d => "conv3d",
        EncoderKind::LongDocument => "long-document",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("scorer", "feed-forward").unwrap();
        c.set("scorer_hidden", "7").unwrap();
        c.set("mode", "AL").unwrap();
        c.set("k_values", "5,10").unwrap();
        c.set("dataset", "/tmp/d").unwrap();
        let mut d = ExperimentConfig::default();
        d.apply_flat(&c.to_flat()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = ExperimentConfig::default();
        assert!(matches!(c.set("colour", "red"), Err(Error::Config(_))));
        assert!(matches!(c.set("beta", "lots"), Err(Error::Config(_))));
        assert!(matches!(c.set("mode", "gan"), Err(Error::Config(_))));
    }
}
