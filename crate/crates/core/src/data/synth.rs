//! Synthetic clickstreams with a controllable attribute/interest coupling.
//!
//! Each user has a binary attribute and a category-preference vector
//! `p = (1 - beta) * Dirichlet(1) + beta * prior(attribute)`, where the two
//! priors are uniform over disjoint halves of the categories. Every display
//! session (past ones that fill the click history and logged impressions
//! alike) first picks a category half with probability equal to the
//! preference mass on that half, fills the slate uniformly from news in that
//! half, and then samples clicks with weight `exp(temperature * C * p[cat])`.
//!
//! Because a slate never mixes halves, the attribute term of `p` is a constant
//! inside any one slate: it decides what gets shown, not what gets clicked
//! among the shown items. The attribute therefore leaks into histories and
//! candidate selection while in-slate click decisions depend only on the
//! attribute-independent Dirichlet part.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::{Dataset, Impression, NewsItem, UserRecord, PAD_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_news: usize,
    /// Must be even: the attribute priors split categories into two halves.
    pub num_categories: usize,
    /// Strength of the attribute/category-preference coupling, in `[0, 1]`.
    pub beta: f64,
    /// Inclusive bounds on the number of clicked news per history.
    pub history_len_range: (usize, usize),
    pub impressions_per_user: usize,
    pub items_per_impression: usize,
    /// Clicks per impression.
    pub clicks_target: usize,
    /// Sharpness of in-slate click sampling.
    pub click_temperature: f64,
    pub vocab_per_category: usize,
    /// Inclusive bounds on title length in tokens.
    pub title_len_range: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_news: 5000,
            num_categories: 10,
            beta: 0.8,
            history_len_range: (5, 20),
            impressions_per_user: 5,
            items_per_impression: 10,
            clicks_target: 1,
            click_temperature: 10.0,
            vocab_per_category: 50,
            title_len_range: (4, 10),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must be in [0, 1], got {}", self.beta));
        }
        if self.num_categories < 2 || !self.num_categories.is_multiple_of(2) {
            return bad(format!(
                "num_categories must be even and at least 2, got {}",
                self.num_categories
            ));
        }
        for (name, v) in [
            ("num_users", self.num_users),
            ("num_news", self.num_news),
            ("impressions_per_user", self.impressions_per_user),
            ("items_per_impression", self.items_per_impression),
            ("clicks_target", self.clicks_target),
            ("vocab_per_category", self.vocab_per_category),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let (hmin, hmax) = self.history_len_range;
        let (tmin, tmax) = self.title_len_range;
        if hmin > hmax || tmin > tmax || tmin == 0 {
            return bad("history_len_range and title_len_range need min <= max and titles need at least one token".into());
        }
        if self.clicks_target > self.items_per_impression {
            return bad(format!(
                "infeasible: clicks_target {} exceeds items_per_impression {}",
                self.clicks_target, self.items_per_impression
            ));
        }
        if self.num_news < self.num_categories {
            return bad(format!(
                "infeasible: {} news cannot cover {} categories",
                self.num_news, self.num_categories
            ));
        }
        if !(self.click_temperature >= 0.0) || !self.click_temperature.is_finite() {
            return bad("click_temperature must be finite and >= 0".into());
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws one slate for a user and returns `(items, clicked flags)`.
struct SessionSampler<'a> {
    halves: [Vec<usize>; 2],
    news: &'a [NewsItem],
    config: &'a SynthConfig,
}

impl SessionSampler<'_> {
    fn session(
        &self,
        rng: &mut ChaCha8Rng,
        pref: &[f64],
        exclude: &HashSet<usize>,
    ) -> Result<Vec<(usize, bool)>> {
        let half_size = self.config.num_categories / 2;
        let mass_high: f64 = pref[half_size..].iter().sum();
        let half = usize::from(rng.gen::<f64>() < mass_high);
        let pool = &self.halves[half];

        let want = self.config.items_per_impression;
        let mut items = Vec::with_capacity(want);
        let mut seen = HashSet::with_capacity(want);
        let available = pool.iter().filter(|n| !exclude.contains(n)).count();
        if available < want {
            return Err(Error::Config(format!(
                "infeasible: a category half has {available} eligible news but a slate needs {want}"
            )));
        }
        while items.len() < want {
            let n = pool[rng.gen_range(0..pool.len())];
            if !exclude.contains(&n) && seen.insert(n) {
                items.push(n);
            }
        }

        let scale = self.config.click_temperature * self.config.num_categories as f64;
        let logits: Vec<f64> = items
            .iter()
            .map(|&n| scale * pref[self.news[n].category_id])
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let mut clicked = vec![false; want];
        for _ in 0..self.config.clicks_target {
            let total: f64 = weights.iter().sum();
            let mut r = rng.gen::<f64>() * total;
            let mut pick = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 && r < *w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            clicked[pick] = true;
            weights[pick] = 0.0;
        }
        Ok(items.into_iter().zip(clicked).collect())
    }
}

/// Generates a dataset as a pure function of `config`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let c = config.num_categories;
    let half_size = c / 2;

    // News catalog on stream 0. The first `c` news take categories in order
    // so category ids coincide with first-appearance order in news.tsv.
    let mut rng = rng_for(config.seed, 0);
    let mut raw_tokens: Vec<Vec<usize>> = Vec::with_capacity(config.num_news);
    let mut news = Vec::with_capacity(config.num_news);
    for i in 0..config.num_news {
        let cat = if i < c { i } else { rng.gen_range(0..c) };
        let len = rng.gen_range(config.title_len_range.0..=config.title_len_range.1);
        let tokens = (0..len)
            .map(|_| cat * config.vocab_per_category + rng.gen_range(0..config.vocab_per_category))
            .collect();
        raw_tokens.push(tokens);
        news.push(NewsItem {
            news_id: format!("N{i}"),
            category_id: cat,
            title_tokens: Vec::new(),
        });
    }

    // Token ids in first-seen order, after the two reserved entries.
    let mut vocab = vec!["<pad>".to_string(), "<unk>".to_string()];
    let mut remap = vec![usize::MAX; c * config.vocab_per_category];
    for (item, raw) in news.iter_mut().zip(&raw_tokens) {
        item.title_tokens = raw
            .iter()
            .map(|&t| {
                if remap[t] == usize::MAX {
                    remap[t] = vocab.len();
                    let cat = t / config.vocab_per_category;
                    vocab.push(format!("w{cat}_{}", t % config.vocab_per_category));
                }
                remap[t]
            })
            .collect();
    }
    debug_assert!(news.iter().all(|n| !n.title_tokens.contains(&PAD_TOKEN)
        && !n.title_tokens.contains(&UNK_TOKEN)));

    let mut halves: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, n) in news.iter().enumerate() {
        halves[usize::from(n.category_id >= half_size)].push(i);
    }
    let sampler = SessionSampler {
        halves,
        news: &news,
        config,
    };

    let mut users = Vec::with_capacity(config.num_users);
    for u in 0..config.num_users {
        let mut rng = rng_for(config.seed, 1 + u as u64);
        let attribute = rng.gen_range(0..2usize);
        let raw: Vec<f64> = (0..c).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = raw.iter().sum();
        let pref: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let prior = if k / half_size == attribute {
                    1.0 / half_size as f64
                } else {
                    0.0
                };
                (1.0 - config.beta) * r / total + config.beta * prior
            })
            .collect();

        let hist_len =
            rng.gen_range(config.history_len_range.0..=config.history_len_range.1);
        let mut history = Vec::with_capacity(hist_len);
        let mut in_history = HashSet::new();
        while history.len() < hist_len {
            let slate = sampler.session(&mut rng, &pref, &in_history)?;
            let clicked: Vec<usize> = slate.iter().filter(|(_, l)| *l).map(|(n, _)| *n).collect();
            let pick = *clicked.choose(&mut rng).expect("at least one click per slate");
            in_history.insert(pick);
            history.push(pick);
        }

        let mut impressions = Vec::with_capacity(config.impressions_per_user);
        for step in 0..config.impressions_per_user {
            let ordinal = step * config.num_users + u;
            impressions.push(Impression {
                impression_id: format!("I{ordinal}"),
                ordinal,
                items: sampler.session(&mut rng, &pref, &in_history)?,
                split: None,
            });
        }
        users.push(UserRecord {
            user_id: format!("U{u}"),
            attribute,
            history,
            impressions,
        });
    }

    Ok(Dataset {
        news,
        users,
        vocab,
        categories: (0..c).map(|k| format!("c{k}")).collect(),
        num_attribute_classes: 2,
    })
}
