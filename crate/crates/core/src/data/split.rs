use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SplitOrder {
    /// Earliest impressions train, latest test.
    #[default]
    Temporal,
    /// Impressions are shuffled with the seed before cutting.
    Shuffled,
}

/// Tags every impression as train, validation or test.
///
/// Counts are `round(n * train_ratio)` and `round(n * val_ratio)`, the rest
/// is test; each split must end up non-empty.
pub fn split_dataset(
    mut dataset: Dataset,
    train_ratio: f64,
    val_ratio: f64,
    order: SplitOrder,
    seed: u64,
) -> Result<Dataset> {
    if !(train_ratio > 0.0 && train_ratio < 1.0 && val_ratio > 0.0 && val_ratio < 1.0)
        || train_ratio + val_ratio >= 1.0
    {
        return Err(Error::Config(format!(
            "split ratios must lie in (0, 1) with a sum below 1, got {train_ratio} and {val_ratio}"
        )));
    }
    let mut slots: Vec<(usize, usize, usize)> = Vec::new();
    for (u, user) in dataset.users.iter().enumerate() {
        for (k, imp) in user.impressions.iter().enumerate() {
            slots.push((imp.ordinal, u, k));
        }
    }
    slots.sort_unstable();
    if order == SplitOrder::Shuffled {
        slots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let n = slots.len();
    let n_train = (n as f64 * train_ratio).round() as usize;
    let n_val = (n as f64 * val_ratio).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Config(format!(
            "split of {n} impressions leaves an empty partition ({n_train} train, {n_val} validation)"
        )));
    }
    for (pos, (_, u, k)) in slots.into_iter().enumerate() {
        let split = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
        dataset.users[u].impressions[k].split = Some(split);
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn hundred() -> Dataset {
        // 20 users x 5 impressions.
        generate_synthetic(&SynthConfig {
            num_users: 20,
            num_news: 300,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn count(d: &Dataset, s: Split) -> usize {
        d.users.iter().map(|u| u.impressions_in(s).count()).sum()
    }

    #[test]
    fn ratios_give_81_9_10() {
        let d = split_dataset(hundred(), 0.81, 0.09, SplitOrder::Temporal, 1).unwrap();
        assert_eq!(count(&d, Split::Train), 81);
        assert_eq!(count(&d, Split::Validation), 9);
        assert_eq!(count(&d, Split::Test), 10);
        assert!(d.users.iter().flat_map(|u| &u.impressions).all(|i| i.split.is_some()));
    }

    #[test]
    fn temporal_split_respects_order() {
        let d = split_dataset(hundred(), 0.6, 0.2, SplitOrder::Temporal, 1).unwrap();
        let imps: Vec<_> = d.users.iter().flat_map(|u| &u.impressions).collect();
        let last_train = imps.iter().filter(|i| i.split == Some(Split::Train)).map(|i| i.ordinal).max().unwrap();
        let first_test = imps.iter().filter(|i| i.split == Some(Split::Test)).map(|i| i.ordinal).min().unwrap();
        assert!(first_test > last_train);
    }

    #[test]
    fn shuffled_split_is_seeded() {
        let a = split_dataset(hundred(), 0.6, 0.2, SplitOrder::Shuffled, 5).unwrap();
        let b = split_dataset(hundred(), 0.6, 0.2, SplitOrder::Shuffled, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(count(&a, Split::Test), 20);
    }

    #[test]
    fn empty_partition_is_a_config_error() {
        let err = split_dataset(hundred(), 0.995, 0.004, SplitOrder::Temporal, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(split_dataset(hundred(), 0.7, 0.4, SplitOrder::Temporal, 0).is_err());
    }
}
