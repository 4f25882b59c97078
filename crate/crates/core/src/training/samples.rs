use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};

/// One positive with its sampled negatives and a uniformly drawn catalog
/// item for the candidate-invariant branch. News are catalog indices; the
/// history is that of `dataset.users[user]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSample {
    pub user: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
    pub random_news: usize,
    pub attribute: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SampleSet {
    pub samples: Vec<TrainingSample>,
    /// Clicked items skipped because their impression had no unclicked item.
    pub skipped_no_negatives: usize,
}

/// One sample per click in every training impression. Each user draws from
/// its own substream of `seed`, so the result does not depend on how many
/// users precede it.
pub fn build_training_samples(dataset: &Dataset, negatives: usize, seed: u64) -> Result<SampleSet> {
    if negatives == 0 {
        return Err(Error::Config("need at least one negative per positive".into()));
    }
    if dataset.news.is_empty() {
        return Err(Error::Data("empty news catalog".into()));
    }
    let mut out = SampleSet::default();
    for (u, user) in dataset.users.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u as u64 + 1);
        for imp in user.impressions_in(Split::Train) {
            let unclicked: Vec<usize> = imp.items.iter().filter(|i| !i.1).map(|i| i.0).collect();
            for &(positive, clicked) in &imp.items {
                if !clicked {
                    continue;
                }
                if unclicked.is_empty() {
                    out.skipped_no_negatives += 1;
                    continue;
                }
                let negs = if unclicked.len() >= negatives {
                    index::sample(&mut rng, unclicked.len(), negatives)
                        .into_iter()
                        .map(|i| unclicked[i])
                        .collect()
                } else {
                    (0..negatives)
                        .map(|_| unclicked[rng.gen_range(0..unclicked.len())])
                        .collect()
                };
                out.samples.push(TrainingSample {
                    user: u,
                    positive,
                    negatives: negs,
                    random_news: rng.gen_range(0..dataset.news.len()),
                    attribute: user.attribute,
                });
            }
        }
    }
    Ok(out)
}
