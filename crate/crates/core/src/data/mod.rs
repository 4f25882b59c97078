//! News catalog, users, impressions, and the ways to obtain them.

mod split;
mod synth;
mod tsv;

use serde::{Deserialize, Serialize};

pub use split::{split_dataset, SplitOrder};
pub use synth::{generate_synthetic, SynthConfig};
pub use tsv::{load_dataset, load_dataset_with_vocab, write_dataset, DatasetMeta};

use crate::error::{Error, Result};

/// Reserved token index for title padding.
pub const PAD_TOKEN: usize = 0;
/// Reserved token index for strings outside a fixed vocabulary.
pub const UNK_TOKEN: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub news_id: String,
    pub category_id: usize,
    pub title_tokens: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Impression {
    pub impression_id: String,
    /// Position in the global log; lower means earlier.
    pub ordinal: usize,
    /// `(catalog index, clicked)` pairs in display order.
    pub items: Vec<(usize, bool)>,
    pub split: Option<Split>,
}

impl Impression {
    pub fn labels(&self) -> Vec<bool> {
        self.items.iter().map(|(_, l)| *l).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub attribute: usize,
    /// Clicked catalog indices, oldest first.
    pub history: Vec<usize>,
    /// Impressions in time order.
    pub impressions: Vec<Impression>,
}

impl UserRecord {
    pub fn impressions_in(&self, split: Split) -> impl Iterator<Item = &Impression> {
        self.impressions
            .iter()
            .filter(move |i| i.split == Some(split))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub news: Vec<NewsItem>,
    pub users: Vec<UserRecord>,
    /// Token strings by index; the first two are [`PAD_TOKEN`] and [`UNK_TOKEN`].
    pub vocab: Vec<String>,
    pub categories: Vec<String>,
    pub num_attribute_classes: usize,
}

impl Dataset {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn num_impressions(&self) -> usize {
        self.users.iter().map(|u| u.impressions.len()).sum()
    }

    /// Checks index bounds and referential integrity.
    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::Data("no users".into()));
        }
        for n in &self.news {
            if n.category_id >= self.categories.len() {
                return Err(Error::Data(format!(
                    "news {} has category {} of {}",
                    n.news_id,
                    n.category_id,
                    self.categories.len()
                )));
            }
            if let Some(t) = n.title_tokens.iter().find(|t| **t >= self.vocab.len()) {
                return Err(Error::Data(format!(
                    "news {} has token {t} outside a vocabulary of {}",
                    n.news_id,
                    self.vocab.len()
                )));
            }
        }
        for u in &self.users {
            if u.attribute >= self.num_attribute_classes {
                return Err(Error::Data(format!(
                    "user {} has attribute {} of {}",
                    u.user_id, u.attribute, self.num_attribute_classes
                )));
            }
            let dangling = u
                .history
                .iter()
                .chain(u.impressions.iter().flat_map(|i| i.items.iter().map(|(n, _)| n)))
                .find(|n| **n >= self.news.len());
            if let Some(n) = dangling {
                return Err(Error::Data(format!(
                    "user {} references news index {n} outside the catalog",
                    u.user_id
                )));
            }
            if u.impressions.iter().any(|i| i.items.is_empty()) {
                return Err(Error::Data(format!("user {} has an empty impression", u.user_id)));
            }
        }
        Ok(())
    }

    /// Stable checksum of the token and category vocabularies, used to match
    /// checkpoints with datasets.
    pub fn vocab_fingerprint(&self) -> String {
        // FNV-1a over the joined strings.
        let mut h: u64 = 0xcbf29ce484222325;
        for s in self.vocab.iter().chain(std::iter::once(&"\u{1}".to_string())).chain(&self.categories) {
            for b in s.bytes().chain(std::iter::once(0u8)) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        format!("{h:016x}")
    }
}
