use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step_scaled, AdamConfig, AdamState, Tape};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::evaluation::ranking_metrics;
use crate::model::{ModelConfig, ModelParams, Ranker, Reversal};

use super::loss::{batch_objective, LossBreakdown, Terms};
use super::samples::build_training_samples;
use super::TrainingConfig;

/// One line of the epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    /// Absent when the dataset has no validation impressions.
    #[serde(rename = "val_AUC")]
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation AUC (the last epoch
    /// without validation data).
    pub params: ModelParams,
    pub model_config: ModelConfig,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub samples_per_epoch: usize,
    pub skipped_no_negatives: usize,
}

pub fn fit(dataset: &Dataset, config: &TrainingConfig) -> Result<TrainOutcome> {
    fit_with_callback(dataset, config, |_| Ok(()))
}

/// [`fit`], calling `on_epoch` after every epoch.
pub fn fit_with_callback(
    dataset: &Dataset,
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let model_config = config.architecture.for_dataset(dataset);
    let mut params = ModelParams::init(&model_config, config.seed)?;
    let mut adam = AdamState::new(params.named().into_iter().map(|(_, t)| t));
    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let has_validation = dataset
        .users
        .iter()
        .any(|u| u.impressions_in(Split::Validation).next().is_some());
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let (mut samples_per_epoch, mut skipped) = (0, 0);

    let lr_scale: Vec<f64> = params
        .named()
        .iter()
        .map(|(n, _)| {
            if ModelParams::is_adversary(n) {
                config.adversary_lr_scale
            } else {
                1.0
            }
        })
        .collect();

    for epoch in 1..=config.epochs {
        // Fresh negatives and random news every epoch.
        let mut set = build_training_samples(
            dataset,
            config.negatives,
            config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )?;
        if set.samples.is_empty() {
            return Err(Error::Data("no training samples: the training split has no clicks with negatives".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        set.samples.shuffle(&mut rng);
        samples_per_epoch = set.samples.len();
        skipped = set.skipped_no_negatives;

        let mut totals = LossBreakdown::default();
        let mut batches = 0usize;
        for (b, batch) in set.samples.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let graph = batch_objective(
                &mut tape,
                &params,
                &model_config,
                dataset,
                batch,
                config.mode,
                config.lambda,
                Reversal::Reverse,
                Terms::ALL,
            )?;
            let loss = tape.value(graph.objective).item();
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            tape.backward(graph.objective)?;
            let grads = params.grads(&tape, &graph.bound);
            adam_step_scaled(&mut params.tensors_mut(), &grads, &mut adam, &adam_config, &lr_scale)?;
            if !params.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss: f64::NAN });
            }
            let l = graph.breakdown;
            totals.l_r += l.l_r;
            totals.l_a += l.l_a;
            totals.l_d += l.l_d;
            totals.l_total += l.l_total;
            batches += 1;
        }
        let n = batches as f64;
        let losses = LossBreakdown {
            l_r: totals.l_r / n,
            l_a: totals.l_a / n,
            l_d: totals.l_d / n,
            l_total: totals.l_total / n,
        };
        let val_auc = if has_validation {
            let ranker = Ranker::new(&params, &model_config, &dataset.news, config.mode.user_model())?;
            Some(ranking_metrics(&ranker, dataset, Some(Split::Validation), 1)?.auc)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            losses,
            val_auc,
        };
        on_epoch(&record)?;
        log.push(record);
        let score = val_auc.unwrap_or(epoch as f64);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        model_config,
        log,
        best_epoch,
        samples_per_epoch,
        skipped_no_negatives: skipped,
    })
}
