//! The single-tower ranker with candidate-aware attention, its two-tower
//! counterpart, and the adversarial branch heads.

mod forward;
mod inference;
mod params;

pub use forward::{
    attention_weights, candidate_aware_user, discriminate, dual_branch_forward, encode_history,
    encode_news, project, score, two_tower_user, BranchOutput, BranchSettings, DualBranchOutput,
    EncodedHistory, NewsBatch, Reversal, UserHistory,
};
pub use inference::{Ranker, UserContext, UserModelKind};
pub use params::{
    Architecture, BoundParams, EncoderKind, ModelConfig, ModelParams, ScorerKind, ScorerParams};

/// Probability vector over attribute classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Accepts nonnegative entries summing to 1 within 1e-9.
    pub fn new(probs: Vec<f64>) -> crate::Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(crate::Error::Contract(format!(
                "not a probability distribution: {probs:?}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(classes: usize) -> Self {
        Self {
            probs: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}
