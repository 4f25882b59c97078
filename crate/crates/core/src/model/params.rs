use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// How the relevance score `f(u, h_c)` is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    InnerProduct,
    /// One tanh hidden layer over `[u; h_c]`.
    FeedForward { hidden: usize },
}

/// Architecture of the candidate-aware user model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    CandidateAttention,
    Conv3d,
    LongDocument,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "candidate-attention" => Ok(Self::CandidateAttention),
            "conv3d" => Ok(Self::Conv3d),
            "long-document" => Ok(Self::LongDocument),
            other => Err(Error::Config(format!("unknown encoder {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_categories: usize,
    pub num_attribute_classes: usize,
    pub d_tok: usize,
    pub d_cat: usize,
    /// News hidden size; user embeddings share it.
    pub d_h: usize,
    /// Width of the additive attention layer.
    pub d_att: usize,
    /// Width of the branch projections fed to the discriminator.
    pub d_d: usize,
    pub history_len: usize,
    pub max_title_len: usize,
    pub scorer: ScorerKind,
    pub encoder: EncoderKind,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, num_categories: usize, num_attribute_classes: usize) -> Self {
        Self {
            vocab_size,
            num_categories,
            num_attribute_classes,
            d_tok: 32,
            d_cat: 16,
            d_h: 64,
            d_att: 32,
            d_d: 32,
            history_len: 20,
            max_title_len: 16,
            scorer: ScorerKind::InnerProduct,
            encoder: EncoderKind::CandidateAttention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.encoder {
            EncoderKind::CandidateAttention => {}
            other => {
                return Err(Error::Config(format!(
                    "encoder {other:?} is not supported; only candidate-attention is implemented"
                )))
            }
        }
        let sizes = [
            ("vocab_size", self.vocab_size),
            ("num_categories", self.num_categories),
            ("d_tok", self.d_tok),
            ("d_cat", self.d_cat),
            ("d_h", self.d_h),
            ("d_att", self.d_att),
            ("d_d", self.d_d),
            ("history_len", self.history_len),
            ("max_title_len", self.max_title_len),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.num_attribute_classes < 2 {
            return Err(Error::Config("need at least two attribute classes".into()));
        }
        if let ScorerKind::FeedForward { hidden: 0 } = self.scorer {
            return Err(Error::Config("feed-forward scorer needs a hidden width".into()));
        }
        Ok(())
    }
}

/// Layer sizes and choices that do not depend on the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub d_tok: usize,
    pub d_cat: usize,
    pub d_h: usize,
    pub d_att: usize,
    pub d_d: usize,
    pub history_len: usize,
    pub max_title_len: usize,
    pub scorer: ScorerKind,
    pub encoder: EncoderKind,
}

impl Default for Architecture {
    fn default() -> Self {
        let c = ModelConfig::new(0, 0, 0);
        Self {
            d_tok: c.d_tok,
            d_cat: c.d_cat,
            d_h: c.d_h,
            d_att: c.d_att,
            d_d: c.d_d,
            history_len: c.history_len,
            max_title_len: c.max_title_len,
            scorer: c.scorer,
            encoder: c.encoder,
        }
    }
}

impl Architecture {
    /// Full model configuration sized for `dataset`.
    pub fn for_dataset(&self, dataset: &Dataset) -> ModelConfig {
        ModelConfig {
            vocab_size: dataset.vocab_size(),
            num_categories: dataset.num_categories(),
            num_attribute_classes: dataset.num_attribute_classes,
            d_tok: self.d_tok,
            d_cat: self.d_cat,
            d_h: self.d_h,
            d_att: self.d_att,
            d_d: self.d_d,
            history_len: self.history_len,
            max_title_len: self.max_title_len,
            scorer: self.scorer,
            encoder: self.encoder,
        }
    }
}

/// Feed-forward relevance function parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
}

/// Every learnable tensor of the ranker and its adversarial heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub token_embedding: Tensor,
    pub category_embedding: Tensor,
    pub news_w: Tensor,
    pub news_b: Tensor,
    /// Additive attention `w^T tanh(A_h h_i + A_c c)`; the two halves of
    /// the stacked projection are kept separate so the history half can be
    /// computed once per user.
    pub att_hist: Tensor,
    pub att_cand: Tensor,
    pub att_w: Tensor,
    /// Learned query that replaces the candidate in the two-tower baseline.
    pub query_vector: Tensor,
    pub proj_c_w: Tensor,
    pub proj_c_b: Tensor,
    pub proj_r_w: Tensor,
    pub proj_r_b: Tensor,
    /// `|A| x d_d`, shared by both branches.
    pub discriminator_w: Tensor,
    pub discriminator_b: Tensor,
    pub scorer: Option<ScorerParams>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, values).expect("sized to shape")
}

impl ModelParams {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    /// Embedding rows are looked up by a single active index and use a
    /// fan-in of 1.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        let news_in = c.d_tok + c.d_cat;
        let a = c.num_attribute_classes;
        let scorer = match c.scorer {
            ScorerKind::InnerProduct => None,
            ScorerKind::FeedForward { hidden } => Some(ScorerParams {
                w1: uniform(&mut rng, 2 * c.d_h, hidden, 2 * c.d_h),
                b1: uniform(&mut rng, 1, hidden, 2 * c.d_h),
                w2: uniform(&mut rng, hidden, 1, hidden),
            }),
        };
        Ok(Self {
            token_embedding: uniform(&mut rng, c.vocab_size, c.d_tok, 1),
            category_embedding: uniform(&mut rng, c.num_categories, c.d_cat, 1),
            news_w: uniform(&mut rng, news_in, c.d_h, news_in),
            news_b: uniform(&mut rng, 1, c.d_h, news_in),
            att_hist: uniform(&mut rng, c.d_h, c.d_att, 2 * c.d_h),
            att_cand: uniform(&mut rng, c.d_h, c.d_att, 2 * c.d_h),
            att_w: uniform(&mut rng, c.d_att, 1, c.d_att),
            query_vector: uniform(&mut rng, 1, c.d_h, c.d_h),
            proj_c_w: uniform(&mut rng, c.d_h, c.d_d, c.d_h),
            proj_c_b: uniform(&mut rng, 1, c.d_d, c.d_h),
            proj_r_w: uniform(&mut rng, c.d_h, c.d_d, c.d_h),
            proj_r_b: uniform(&mut rng, 1, c.d_d, c.d_h),
            discriminator_w: uniform(&mut rng, a, c.d_d, c.d_d),
            discriminator_b: uniform(&mut rng, 1, a, c.d_d),
            scorer,
        })
    }

    /// Parameter tensors in a fixed order, with names.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![
            ("token_embedding", &self.token_embedding),
            ("category_embedding", &self.category_embedding),
            ("news_w", &self.news_w),
            ("news_b", &self.news_b),
            ("att_hist", &self.att_hist),
            ("att_cand", &self.att_cand),
            ("att_w", &self.att_w),
            ("query_vector", &self.query_vector),
            ("proj_c_w", &self.proj_c_w),
            ("proj_c_b", &self.proj_c_b),
            ("proj_r_w", &self.proj_r_w),
            ("proj_r_b", &self.proj_r_b),
            ("discriminator_w", &self.discriminator_w),
            ("discriminator_b", &self.discriminator_b),
        ];
        if let Some(s) = &self.scorer {
            out.extend([("scorer_w1", &s.w1), ("scorer_b1", &s.b1), ("scorer_w2", &s.w2)]);
        }
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.token_embedding,
            &mut self.category_embedding,
            &mut self.news_w,
            &mut self.news_b,
            &mut self.att_hist,
            &mut self.att_cand,
            &mut self.att_w,
            &mut self.query_vector,
            &mut self.proj_c_w,
            &mut self.proj_c_b,
            &mut self.proj_r_w,
            &mut self.proj_r_b,
            &mut self.discriminator_w,
            &mut self.discriminator_b,
        ];
        if let Some(s) = &mut self.scorer {
            out.extend([&mut s.w1, &mut s.b1, &mut s.w2]);
        }
        out
    }

    /// Names of the parameters that belong to the adversary: the branch
    /// projections and the discriminator. Everything else is the ranker.
    pub fn is_adversary(name: &str) -> bool {
        name.starts_with("proj_") || name.starts_with("discriminator_")
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// Registers every tensor on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars: Vec<Var> = self.named().into_iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        BoundParams::from_vars(&vars, self.scorer.is_some())
    }

    /// Gradients of every parameter after `tape.backward`, in
    /// [`ModelParams::named`] order.
    pub fn grads(&self, tape: &Tape, bound: &BoundParams) -> Vec<Tensor> {
        bound.all().into_iter().map(|v| tape.grad(v)).collect()
    }
}

/// Tape handles for every parameter, mirroring [`ModelParams`].
#[derive(Clone, Copy, Debug)]
pub struct BoundParams {
    pub token_embedding: Var,
    pub category_embedding: Var,
    pub news_w: Var,
    pub news_b: Var,
    pub att_hist: Var,
    pub att_cand: Var,
    pub att_w: Var,
    pub query_vector: Var,
    pub proj_c_w: Var,
    pub proj_c_b: Var,
    pub proj_r_w: Var,
    pub proj_r_b: Var,
    pub discriminator_w: Var,
    pub discriminator_b: Var,
    pub scorer: Option<(Var, Var, Var)>,
}

impl BoundParams {
    fn from_vars(v: &[Var], has_scorer: bool) -> Self {
        Self {
            token_embedding: v[0],
            category_embedding: v[1],
            news_w: v[2],
            news_b: v[3],
            att_hist: v[4],
            att_cand: v[5],
            att_w: v[6],
            query_vector: v[7],
            proj_c_w: v[8],
            proj_c_b: v[9],
            proj_r_w: v[10],
            proj_r_b: v[11],
            discriminator_w: v[12],
            discriminator_b: v[13],
            scorer: has_scorer.then(|| (v[14], v[15], v[16])),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![
            self.token_embedding,
            self.category_embedding,
            self.news_w,
            self.news_b,
            self.att_hist,
            self.att_cand,
            self.att_w,
            self.query_vector,
            self.proj_c_w,
            self.proj_c_b,
            self.proj_r_w,
            self.proj_r_b,
            self.discriminator_w,
            self.discriminator_b,
        ];
        if let Some((a, b, c)) = self.scorer {
            out.extend([a, b, c]);
        }
        out
    }
}
