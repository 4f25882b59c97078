use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, LOG_FLOOR};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    candidate_aware_user, dual_branch_forward, encode_history, encode_news, score, two_tower_user,
    BoundParams, BranchSettings, Distribution, ModelConfig, ModelParams, Reversal, UserHistory,
    UserModelKind,
};

use super::samples::TrainingSample;
use super::Mode;

/// `-log softmax([pos, negs...])[0]`, evaluated with max subtraction.
pub fn info_nce_loss(pos_score: f64, neg_scores: &[f64]) -> f64 {
    let max = neg_scores.iter().copied().fold(pos_score, f64::max);
    let total: f64 = std::iter::once(pos_score)
        .chain(neg_scores.iter().copied())
        .map(|s| (s - max).exp())
        .sum();
    max + total.ln() - pos_score
}

pub fn cross_entropy(z: &Distribution, label: usize) -> Result<f64> {
    let p = z.probs().get(label).ok_or_else(|| {
        Error::Contract(format!("label {label} outside {} classes", z.len()))
    })?;
    Ok(-p.max(LOG_FLOOR).ln())
}

/// Mean cross-entropy of both branch predictions against the label.
pub fn adversarial_loss(z_hat: &Distribution, z_tilde: &Distribution, label: usize) -> Result<f64> {
    Ok(0.5 * (cross_entropy(z_hat, label)? + cross_entropy(z_tilde, label)?))
}

/// `KL(z_hat || z_tilde)` with both operands floored at 1e-12 inside the
/// logarithm.
pub fn kl_loss(z_hat: &Distribution, z_tilde: &Distribution) -> Result<f64> {
    if z_hat.len() != z_tilde.len() {
        return Err(Error::Contract(format!(
            "KL between {} and {} classes",
            z_hat.len(),
            z_tilde.len()
        )));
    }
    Ok(z_hat
        .probs()
        .iter()
        .zip(z_tilde.probs())
        .map(|(p, q)| p * (p.max(LOG_FLOOR).ln() - q.max(LOG_FLOOR).ln()))
        .sum())
}

/// Loss values of one batch or epoch. `l_total` is the reported
/// `L_R - lambda L_A + L_D`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_R")]
    pub l_r: f64,
    #[serde(rename = "L_A")]
    pub l_a: f64,
    #[serde(rename = "L_D")]
    pub l_d: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn new(l_r: f64, l_a: f64, l_d: f64, lambda: f64) -> Self {
        Self {
            l_r,
            l_a,
            l_d,
            l_total: l_r - lambda * l_a + l_d,
        }
    }
}

pub fn tape_info_nce(tape: &mut Tape, pos: Var, negs: &[Var]) -> Result<Var> {
    let mut all = Vec::with_capacity(negs.len() + 1);
    all.push(pos);
    all.extend_from_slice(negs);
    let row = tape.concat_cols(&all)?;
    tape.softmax_cross_entropy(row, 0)
}

pub fn tape_cross_entropy(tape: &mut Tape, z: Var, label: usize) -> Result<Var> {
    let p = tape.pick(z, label)?;
    let lp = tape.log(p);
    Ok(tape.scale(lp, -1.0))
}

pub fn tape_kl(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let lp = tape.log(p);
    let lq = tape.log(q);
    let diff = tape.sub(lp, lq)?;
    let terms = tape.mul(p, diff)?;
    Ok(tape.sum(terms))
}

/// Which loss terms enter the differentiated objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub ranking: bool,
    pub adversarial: bool,
    pub kl: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        ranking: true,
        adversarial: true,
        kl: true,
    };
}

pub struct BatchGraph {
    /// `L_R + L_A + L_D` restricted to the selected terms, with the
    /// reversal of the adversarial path embedded in the graph.
    pub objective: Var,
    pub breakdown: LossBreakdown,
    pub bound: BoundParams,
}

fn mean_of(tape: &mut Tape, parts: &[Var]) -> Result<Option<Var>> {
    if parts.is_empty() {
        return Ok(None);
    }
    let total = tape.add_n(parts)?;
    Ok(Some(tape.scale(total, 1.0 / parts.len() as f64)))
}

/// Builds the unified objective of one mini-batch on `tape`.
///
/// Adversarial terms use the clicked candidate for the candidate-aware
/// branch and the sample's random news for the invariant branch. Users
/// without history contribute to the ranking loss only.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    tape: &mut Tape,
    params: &ModelParams,
    config: &ModelConfig,
    dataset: &Dataset,
    batch: &[TrainingSample],
    mode: Mode,
    lambda: f64,
    reversal: Reversal,
    terms: Terms,
) -> Result<BatchGraph> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let p = params.bind(tape);
    let mut items = Vec::new();
    for s in batch {
        items.extend_from_slice(&dataset.users[s.user].history);
        items.push(s.positive);
        items.extend_from_slice(&s.negatives);
        if mode.invariant_branch() {
            items.push(s.random_news);
        }
    }
    let bank = encode_news(tape, &p, config, &dataset.news, &items)?;
    let settings = BranchSettings { lambda, reversal };
    let (mut ranking, mut adversarial, mut kl) = (Vec::new(), Vec::new(), Vec::new());
    for s in batch {
        if s.attribute >= config.num_attribute_classes {
            return Err(Error::Contract(format!(
                "attribute {} outside {} classes",
                s.attribute, config.num_attribute_classes
            )));
        }
        let history = UserHistory::from_clicks(&dataset.users[s.user].history, config.history_len);
        let enc = encode_history(tape, &p, &bank, &history)?;
        let pos = bank.vector(tape, s.positive)?;
        let fixed_user = match mode.user_model() {
            UserModelKind::TwoTower => Some(two_tower_user(tape, &p, &enc)?),
            UserModelKind::CandidateAware => None,
        };
        let user_for = |tape: &mut Tape, cand: Var| match fixed_user {
            Some(u) => Ok(u),
            None => candidate_aware_user(tape, &p, &enc, cand),
        };
        let pos_score = if mode.adversarial() {
            let random = if mode.invariant_branch() {
                Some(bank.vector(tape, s.random_news)?)
            } else {
                None
            };
            let out = dual_branch_forward(tape, &p, &enc, pos, random, settings)?;
            if !out.cold_start {
                let ce_hat = tape_cross_entropy(tape, out.candidate.adversarial, s.attribute)?;
                match out.invariant {
                    Some(inv) => {
                        let ce_tilde = tape_cross_entropy(tape, inv.adversarial, s.attribute)?;
                        let both = tape.add(ce_hat, ce_tilde)?;
                        adversarial.push(tape.scale(both, 0.5));
                        if mode.kl() {
                            kl.push(tape_kl(tape, out.candidate.plain, inv.plain)?);
                        }
                    }
                    None => adversarial.push(ce_hat),
                }
            }
            out.score
        } else {
            let u = user_for(tape, pos)?;
            score(tape, &p, u, pos)?
        };
        let mut neg_scores = Vec::with_capacity(s.negatives.len());
        for &n in &s.negatives {
            let h = bank.vector(tape, n)?;
            let u = user_for(tape, h)?;
            neg_scores.push(score(tape, &p, u, h)?);
        }
        ranking.push(tape_info_nce(tape, pos_score, &neg_scores)?);
    }
    let l_r = mean_of(tape, &ranking)?.expect("batch is non-empty");
    let l_a = mean_of(tape, &adversarial)?;
    let l_d = mean_of(tape, &kl)?;
    let value = |tape: &Tape, v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    let breakdown = LossBreakdown::new(
        tape.value(l_r).item(),
        value(tape, l_a),
        value(tape, l_d),
        if mode.adversarial() { lambda } else { 0.0 },
    );
    let mut selected = Vec::new();
    if terms.ranking {
        selected.push(l_r);
    }
    if terms.adversarial {
        selected.extend(l_a);
    }
    if terms.kl {
        selected.extend(l_d);
    }
    let objective = match selected.len() {
        0 => tape.constant(crate::autodiff::Tensor::scalar(0.0)),
        _ => tape.add_n(&selected)?,
    };
    Ok(BatchGraph {
        objective,
        breakdown,
        bound: p,
    })
}
