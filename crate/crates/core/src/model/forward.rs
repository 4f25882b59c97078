//! Differentiable forward pass of the ranker and its adversarial branches.

use std::collections::HashMap;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{NewsItem, PAD_TOKEN};
use crate::error::{Error, Result};

use super::params::{BoundParams, ModelConfig};

/// A user's clicked news, left-padded with empty slots to the configured
/// history length. Empty slots are masked out of attention.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserHistory {
    slots: Vec<Option<usize>>,
}

impl UserHistory {
    /// Keeps the most recent `len` clicks.
    pub fn from_clicks(clicks: &[usize], len: usize) -> Self {
        let recent = &clicks[clicks.len().saturating_sub(len)..];
        let mut slots = vec![None; len - recent.len()];
        slots.extend(recent.iter().map(|c| Some(*c)));
        Self { slots }
    }

    pub fn slots(&self) -> &[Option<usize>] {
        &self.slots
    }

    pub fn mask(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_some).collect()
    }

    pub fn is_cold_start(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    pub fn clicked(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().flatten().copied()
    }
}

/// Title tokens that feed the encoder: truncated, padding removed, bounds
/// checked against the vocabulary.
pub(crate) fn title_group(item: &NewsItem, config: &ModelConfig) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(config.max_title_len);
    for &t in item.title_tokens.iter().take(config.max_title_len) {
        if t >= config.vocab_size {
            return Err(Error::Data(format!(
                "news {} has token index {t} outside a vocabulary of {}",
                item.news_id, config.vocab_size
            )));
        }
        if t != PAD_TOKEN {
            out.push(t);
        }
    }
    if item.category_id >= config.num_categories {
        return Err(Error::Data(format!(
            "news {} has category {} outside {} categories",
            item.news_id, item.category_id, config.num_categories
        )));
    }
    Ok(out)
}

/// Hidden vectors `h` for a set of catalog items, one row each.
pub struct NewsBatch {
    pub matrix: Var,
    rows: HashMap<usize, usize>,
}

impl NewsBatch {
    pub fn row_of(&self, news: usize) -> Option<usize> {
        self.rows.get(&news).copied()
    }

    /// The `1 x d_h` hidden vector of one encoded item.
    pub fn vector(&self, tape: &mut Tape, news: usize) -> Result<Var> {
        let row = self
            .row_of(news)
            .ok_or_else(|| Error::Contract(format!("news index {news} was not encoded")))?;
        tape.gather(self.matrix, vec![row])
    }
}

/// `h = W [mean(title token embeddings); category embedding] + b` for every
/// distinct item in `items`.
pub fn encode_news(
    tape: &mut Tape,
    p: &BoundParams,
    config: &ModelConfig,
    catalog: &[NewsItem],
    items: &[usize],
) -> Result<NewsBatch> {
    let mut rows = HashMap::new();
    let mut order = Vec::new();
    for &i in items {
        if i >= catalog.len() {
            return Err(Error::Data(format!("news index {i} outside the catalog")));
        }
        rows.entry(i).or_insert_with(|| {
            order.push(i);
            order.len() - 1
        });
    }
    if order.is_empty() {
        return Err(Error::Contract("encode_news needs at least one item".into()));
    }
    let groups = order
        .iter()
        .map(|&i| title_group(&catalog[i], config))
        .collect::<Result<Vec<_>>>()?;
    let cats = order.iter().map(|&i| catalog[i].category_id).collect();
    let tok = tape.gather_mean(p.token_embedding, groups)?;
    let cat = tape.gather(p.category_embedding, cats)?;
    let x = tape.concat_cols(&[tok, cat])?;
    let h = tape.matmul(x, p.news_w)?;
    let matrix = tape.add_row(h, p.news_b)?;
    Ok(NewsBatch { matrix, rows })
}

/// History rows and their attention keys, shared by every candidate scored
/// against the same user.
pub struct EncodedHistory {
    /// `N x d_h`; masked rows hold an arbitrary encoded item.
    pub h: Var,
    /// `N x d_att`, the history half of the attention projection.
    pub keys: Var,
    pub mask: Vec<bool>,
    pub cold_start: bool,
}

pub fn encode_history(
    tape: &mut Tape,
    p: &BoundParams,
    bank: &NewsBatch,
    history: &UserHistory,
) -> Result<EncodedHistory> {
    let filler = history.clicked().next();
    let rows = history
        .slots()
        .iter()
        .map(|s| match s.or(filler) {
            Some(n) => bank
                .row_of(n)
                .ok_or_else(|| Error::Contract(format!("history news {n} was not encoded"))),
            None => Ok(0),
        })
        .collect::<Result<Vec<_>>>()?;
    let h = tape.gather(bank.matrix, rows)?;
    let keys = tape.matmul(h, p.att_hist)?;
    Ok(EncodedHistory {
        h,
        keys,
        mask: history.mask(),
        cold_start: history.is_cold_start(),
    })
}

/// Attention weights `softmax_i(w^T tanh(A_h h_i + A_c c))` over the
/// unmasked history, as a `1 x N` row.
pub fn attention_weights(
    tape: &mut Tape,
    p: &BoundParams,
    history: &EncodedHistory,
    cand: Var,
) -> Result<Var> {
    let q = tape.matmul(cand, p.att_cand)?;
    let pre = tape.add_row(history.keys, q)?;
    let act = tape.tanh(pre);
    let logits = tape.matmul(act, p.att_w)?;
    let logits = tape.transpose(logits)?;
    tape.masked_softmax(logits, history.mask.clone())
}

/// Candidate-aware user embedding `u = sum_i alpha_i h_i`. A cold-start user
/// gets the zero vector.
pub fn candidate_aware_user(
    tape: &mut Tape,
    p: &BoundParams,
    history: &EncodedHistory,
    cand: Var,
) -> Result<Var> {
    if history.cold_start {
        let d = tape.value(history.h).cols();
        return Ok(tape.constant(Tensor::zeros(&[1, d])));
    }
    let alpha = attention_weights(tape, p, history, cand)?;
    tape.matmul(alpha, history.h)
}

/// Two-tower user embedding: the same pooling driven by the learned query
/// vector, so it never sees a candidate.
pub fn two_tower_user(tape: &mut Tape, p: &BoundParams, history: &EncodedHistory) -> Result<Var> {
    candidate_aware_user(tape, p, history, p.query_vector)
}

/// Relevance `f(u, h_c)`: inner product, or a one-hidden-layer network
/// when the model carries scorer parameters.
pub fn score(tape: &mut Tape, p: &BoundParams, u: Var, h_c: Var) -> Result<Var> {
    match p.scorer {
        None => tape.dot(u, h_c),
        Some((w1, b1, w2)) => {
            let (du, dc) = (tape.value(u).len(), tape.value(h_c).len());
            if du != dc {
                return Err(Error::Contract(format!(
                    "score needs equal dimensions, got {du} and {dc}"
                )));
            }
            let x = tape.concat_cols(&[u, h_c])?;
            let hdn = tape.matmul(x, w1)?;
            let hdn = tape.add_row(hdn, b1)?;
            let hdn = tape.tanh(hdn);
            tape.matmul(hdn, w2)
        }
    }
}

/// Branch projection `tanh(u W + b)`.
pub fn project(tape: &mut Tape, w: Var, b: Var, u: Var) -> Result<Var> {
    let z = tape.matmul(u, w)?;
    let z = tape.add_row(z, b)?;
    Ok(tape.tanh(z))
}

/// Shared attribute discriminator `softmax(W d + b)`.
pub fn discriminate(tape: &mut Tape, p: &BoundParams, d: Var) -> Result<Var> {
    let wt = tape.transpose(p.discriminator_w)?;
    let logits = tape.matmul(d, wt)?;
    let logits = tape.add_row(logits, p.discriminator_b)?;
    tape.softmax(logits)
}

/// Whether the reversal nodes actually reverse. `Identity` exists so tests
/// can compute the plain derivative of the adversarial loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reversal {
    Reverse,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchSettings {
    pub lambda: f64,
    pub reversal: Reversal,
}

/// Distributions from one branch. `adversarial` sits behind the gradient
/// reversal and feeds the adversarial loss; `plain` has the same value but
/// a direct path to the user model and feeds the KL loss.
#[derive(Clone, Copy, Debug)]
pub struct BranchOutput {
    pub user: Var,
    pub adversarial: Var,
    pub plain: Var,
}

pub struct DualBranchOutput {
    pub score: Var,
    pub candidate: BranchOutput,
    pub invariant: Option<BranchOutput>,
    /// Cold-start users have no branch outputs worth training on.
    pub cold_start: bool,
}

fn branch(
    tape: &mut Tape,
    p: &BoundParams,
    (w, b): (Var, Var),
    user: Var,
    settings: BranchSettings,
) -> Result<BranchOutput> {
    let reversed = match settings.reversal {
        Reversal::Reverse => tape.grad_reverse(user, settings.lambda)?,
        Reversal::Identity => user,
    };
    let d_adv = project(tape, w, b, reversed)?;
    let adversarial = discriminate(tape, p, d_adv)?;
    let d_plain = project(tape, w, b, user)?;
    let plain = discriminate(tape, p, d_plain)?;
    Ok(BranchOutput {
        user,
        adversarial,
        plain,
    })
}

/// Runs the shared candidate-aware user model on the displayed candidate and,
/// when given, on a random catalog item, and passes each user embedding
/// through its own projection into the shared discriminator.
pub fn dual_branch_forward(
    tape: &mut Tape,
    p: &BoundParams,
    history: &EncodedHistory,
    cand: Var,
    random: Option<Var>,
    settings: BranchSettings,
) -> Result<DualBranchOutput> {
    let u_c = candidate_aware_user(tape, p, history, cand)?;
    let score = score(tape, p, u_c, cand)?;
    let candidate = branch(tape, p, (p.proj_c_w, p.proj_c_b), u_c, settings)?;
    let invariant = match random {
        Some(r) => {
            let u_r = candidate_aware_user(tape, p, history, r)?;
            Some(branch(tape, p, (p.proj_r_w, p.proj_r_b), u_r, settings)?)
        }
        None => None,
    };
    Ok(DualBranchOutput {
        score,
        candidate,
        invariant,
        cold_start: history.cold_start,
    })
}
