//! Negative sampling, the ranking/adversarial/KL losses, and the training
//! loop.

mod fit;
mod loss;
mod samples;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fit::{fit, fit_with_callback, EpochRecord, TrainOutcome};
pub use loss::{
    adversarial_loss, batch_objective, cross_entropy, info_nce_loss, kl_loss, tape_cross_entropy,
    tape_info_nce, tape_kl, BatchGraph, LossBreakdown, Terms,
};
pub use samples::{build_training_samples, SampleSet, TrainingSample};

use crate::error::{Error, Result};
use crate::model::{Architecture, UserModelKind};

/// Which user model and loss terms a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    /// Single-tower ranker trained on the ranking loss alone.
    Base,
    /// Adversarial learning on the candidate-aware branch only.
    Al,
    FairRank,
    FairRankNoKl,
    /// Drops the candidate-invariant branch, and with it the KL term;
    /// trains exactly like [`Mode::Al`].
    FairRankNoInvariant,
    /// Candidate-independent user embedding, ranking loss only.
    TwoTower,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::TwoTower,
        Mode::Base,
        Mode::Al,
        Mode::FairRankNoInvariant,
        Mode::FairRankNoKl,
        Mode::FairRank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Base => "base",
            Mode::Al => "AL",
            Mode::FairRank => "FairRank",
            Mode::FairRankNoKl => "FairRank-no-KL",
            Mode::FairRankNoInvariant => "FairRank-no-invariant",
            Mode::TwoTower => "two-tower",
        }
    }

    pub fn user_model(self) -> UserModelKind {
        match self {
            Mode::TwoTower => UserModelKind::TwoTower,
            _ => UserModelKind::CandidateAware,
        }
    }

    /// Whether the discriminator and the adversarial loss are active.
    pub fn adversarial(self) -> bool {
        !matches!(self, Mode::Base | Mode::TwoTower)
    }

    /// Whether the random-candidate branch is built.
    pub fn invariant_branch(self) -> bool {
        matches!(self, Mode::FairRank | Mode::FairRankNoKl)
    }

    pub fn kl(self) -> bool {
        self == Mode::FairRank
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown mode {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

impl TryFrom<String> for Mode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> String {
        m.name().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Weight of the reversed adversarial gradient.
    pub lambda: f64,
    pub learning_rate: f64,
    /// Learning-rate multiplier for the projection and discriminator heads.
    pub adversary_lr_scale: f64,
    pub batch_size: usize,
    /// Negatives per positive.
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: Mode,
    pub architecture: Architecture,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            learning_rate: 1e-4,
            adversary_lr_scale: 1.0,
            batch_size: 32,
            negatives: 4,
            epochs: 5,
            seed: 0,
            mode: Mode::FairRank,
            architecture: Architecture::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.adversary_lr_scale > 0.0 && self.adversary_lr_scale.is_finite()) {
            return Err(Error::Config(format!(
                "adversary_lr_scale must be positive, got {}",
                self.adversary_lr_scale
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
