//! Gradient-free scoring for evaluation. Mirrors the tape forward pass with
//! plain loops and precomputes every news vector once.

use serde::{Deserialize, Serialize};

use crate::data::NewsItem;
use crate::error::Result;

use super::forward::{title_group, UserHistory};
use super::params::{ModelConfig, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UserModelKind {
    /// Single tower: the user embedding attends to each candidate.
    CandidateAware,
    /// The user embedding comes from the learned query alone.
    TwoTower,
}

pub struct Ranker<'a> {
    params: &'a ModelParams,
    kind: UserModelKind,
    d_h: usize,
    d_att: usize,
    history_len: usize,
    news_h: Vec<f64>,
    /// Candidate half of the attention projection, per news.
    news_q: Vec<f64>,
}

/// Per-user state reused across candidates.
pub struct UserContext {
    rows: Vec<usize>,
    keys: Vec<f64>,
    /// Fixed embedding for two-tower models and cold-start users.
    fixed: Option<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x (1 x n) * w (n x m)`.
fn vec_mat(x: &[f64], w: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (i, xv) in x.iter().enumerate() {
        for (o, wv) in out.iter_mut().zip(&w[i * m..(i + 1) * m]) {
            *o += xv * wv;
        }
    }
    out
}

impl<'a> Ranker<'a> {
    pub fn new(
        params: &'a ModelParams,
        config: &ModelConfig,
        catalog: &[NewsItem],
        kind: UserModelKind,
    ) -> Result<Self> {
        config.validate()?;
        let (d_tok, d_cat, d_h) = (config.d_tok, config.d_cat, config.d_h);
        let mut news_h = Vec::with_capacity(catalog.len() * d_h);
        let tok = params.token_embedding.values();
        let cat = params.category_embedding.values();
        let mut x = vec![0.0; d_tok + d_cat];
        for item in catalog {
            let group = title_group(item, config)?;
            x.iter_mut().for_each(|v| *v = 0.0);
            for &t in &group {
                for (o, v) in x[..d_tok].iter_mut().zip(&tok[t * d_tok..(t + 1) * d_tok]) {
                    *o += v;
                }
            }
            if !group.is_empty() {
                let inv = 1.0 / group.len() as f64;
                x[..d_tok].iter_mut().for_each(|v| *v *= inv);
            }
            let c = item.category_id;
            x[d_tok..].copy_from_slice(&cat[c * d_cat..(c + 1) * d_cat]);
            let mut h = vec_mat(&x, params.news_w.values(), d_h);
            h.iter_mut()
                .zip(params.news_b.values())
                .for_each(|(o, b)| *o += b);
            news_h.extend(h);
        }
        let news_q = news_h
            .chunks(d_h)
            .flat_map(|h| vec_mat(h, params.att_cand.values(), config.d_att))
            .collect();
        Ok(Self {
            params,
            kind,
            d_h,
            d_att: config.d_att,
            history_len: config.history_len,
            news_h,
            news_q,
        })
    }

    pub fn kind(&self) -> UserModelKind {
        self.kind
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    pub fn news_vector(&self, news: usize) -> &[f64] {
        &self.news_h[news * self.d_h..(news + 1) * self.d_h]
    }

    fn news_query(&self, news: usize) -> &[f64] {
        &self.news_q[news * self.d_att..(news + 1) * self.d_att]
    }

    pub fn context(&self, history: &UserHistory) -> UserContext {
        let rows: Vec<usize> = history.clicked().collect();
        let mut keys = Vec::with_capacity(rows.len() * self.d_att);
        for &r in &rows {
            keys.extend(vec_mat(
                self.news_vector(r),
                self.params.att_hist.values(),
                self.d_att,
            ));
        }
        let mut ctx = UserContext {
            rows,
            keys,
            fixed: None,
        };
        if ctx.rows.is_empty() {
            ctx.fixed = Some(vec![0.0; self.d_h]);
        } else if self.kind == UserModelKind::TwoTower {
            let q = vec_mat(
                self.params.query_vector.values(),
                self.params.att_cand.values(),
                self.d_att,
            );
            ctx.fixed = Some(self.attend(&ctx, &q));
        }
        ctx
    }

    /// Attention pooling for a candidate whose projection is `q`.
    fn attend(&self, ctx: &UserContext, q: &[f64]) -> Vec<f64> {
        let w = self.params.att_w.values();
        let logits: Vec<f64> = ctx
            .keys
            .chunks(self.d_att)
            .map(|k| k.iter().zip(q).zip(w).map(|((a, b), wv)| wv * (a + b).tanh()).sum())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut u = vec![0.0; self.d_h];
        for (e, &r) in exps.iter().zip(&ctx.rows) {
            let a = e / total;
            for (o, h) in u.iter_mut().zip(self.news_vector(r)) {
                *o += a * h;
            }
        }
        u
    }

    /// User embedding for one candidate.
    pub fn user_embedding(&self, ctx: &UserContext, cand: usize) -> Vec<f64> {
        match &ctx.fixed {
            Some(u) => u.clone(),
            None => self.attend(ctx, self.news_query(cand)),
        }
    }

    fn relevance(&self, u: &[f64], h: &[f64]) -> f64 {
        match &self.params.scorer {
            None => dot(u, h),
            Some(s) => {
                let hidden = s.b1.len();
                let mut x = u.to_vec();
                x.extend_from_slice(h);
                let z = vec_mat(&x, s.w1.values(), hidden);
                z.iter()
                    .zip(s.b1.values())
                    .zip(s.w2.values())
                    .map(|((z, b), w)| w * (z + b).tanh())
                    .sum()
            }
        }
    }

    pub fn score(&self, ctx: &UserContext, cand: usize) -> f64 {
        let h = self.news_vector(cand);
        match &ctx.fixed {
            Some(u) => self.relevance(u, h),
            None => self.relevance(&self.attend(ctx, self.news_query(cand)), h),
        }
    }

    pub fn score_items(&self, history: &UserHistory, items: &[usize]) -> Vec<f64> {
        let ctx = self.context(history);
        items.iter().map(|&i| self.score(&ctx, i)).collect()
    }
}
