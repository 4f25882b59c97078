//! Ranking accuracy over logged impressions and the attribute-leakage probe.

mod metrics;
mod probe;

use serde::{Deserialize, Serialize};

pub use metrics::{auc, balanced_accuracy, ndcg_at_k, ranking_order};
pub use probe::{
    fairness_probe, probe_accuracy, probe_users, ProbeConfig, ProbeRanker, ProbeResult,
    SoftmaxClassifier,
};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{Ranker, UserHistory};

/// Maps `f` over `items` on up to `threads` scoped threads. Output order
/// matches input order regardless of the thread count.
pub(crate) fn parallel_map<T: Sync, U: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> U + Sync,
) -> Vec<U> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    })
}

/// Mean per-impression AUC and nDCG@10 with counts of impressions left out
/// because a metric was undefined for them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub auc: f64,
    pub ndcg_at_10: f64,
    pub num_impressions: usize,
    pub auc_excluded: usize,
    pub ndcg_excluded: usize,
}

/// Ranking metrics over the impressions of `split`, or over every
/// impression when `split` is `None`.
pub fn ranking_metrics(
    ranker: &Ranker,
    dataset: &Dataset,
    split: Option<Split>,
    threads: usize,
) -> Result<RankingMetrics> {
    let users: Vec<usize> = (0..dataset.users.len()).collect();
    let per_user = parallel_map(&users, threads, |&u| {
        let user = &dataset.users[u];
        let history = UserHistory::from_clicks(&user.history, ranker.history_len());
        let ctx = ranker.context(&history);
        user.impressions
            .iter()
            .filter(|i| split.is_none() || i.split == split)
            .map(|imp| {
                let labels = imp.labels();
                let scores: Vec<f64> = imp.items.iter().map(|(n, _)| ranker.score(&ctx, *n)).collect();
                (auc(&labels, &scores), ndcg_at_k(&labels, &scores, 10))
            })
            .collect::<Vec<_>>()
    });
    let mut m = RankingMetrics {
        auc: 0.0,
        ndcg_at_10: 0.0,
        num_impressions: 0,
        auc_excluded: 0,
        ndcg_excluded: 0,
    };
    let (mut auc_n, mut ndcg_n) = (0usize, 0usize);
    for (a, n) in per_user.into_iter().flatten() {
        m.num_impressions += 1;
        match a {
            Some(v) => {
                m.auc += v;
                auc_n += 1;
            }
            None => m.auc_excluded += 1,
        }
        match n {
            Some(v) => {
                m.ndcg_at_10 += v;
                ndcg_n += 1;
            }
            None => m.ndcg_excluded += 1,
        }
    }
    if auc_n == 0 || ndcg_n == 0 {
        return Err(Error::Data(format!(
            "no impression in {split:?} has both clicked and unclicked items"
        )));
    }
    m.auc /= auc_n as f64;
    m.ndcg_at_10 /= ndcg_n as f64;
    Ok(m)
}

/// Who produced the evaluated parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mode: String,
    pub lambda: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub ndcg_at_10: f64,
    /// Probe balanced accuracy at k = 10 and 20; absent when the probe
    /// configuration leaves that k out.
    pub acc_at_10: Option<f64>,
    pub acc_at_20: Option<f64>,
    pub num_users: usize,
    pub num_impressions: usize,
    pub auc_excluded: usize,
    pub ndcg_excluded: usize,
    pub mode: String,
    pub lambda: f64,
    pub seed: u64,
}

/// Test-split ranking metrics plus the fairness probe.
pub fn evaluate(
    ranker: &Ranker,
    dataset: &Dataset,
    probe: &ProbeConfig,
    provenance: &Provenance,
    threads: usize,
) -> Result<MetricsReport> {
    let tagged = dataset
        .users
        .iter()
        .any(|u| u.impressions.iter().any(|i| i.split.is_some()));
    let ranking = ranking_metrics(ranker, dataset, tagged.then_some(Split::Test), threads)?;
    let leakage = fairness_probe(ranker, dataset, probe, threads)?;
    Ok(MetricsReport {
        auc: ranking.auc,
        ndcg_at_10: ranking.ndcg_at_10,
        acc_at_10: leakage.at(10),
        acc_at_20: leakage.at(20),
        num_users: probe_users(dataset).len(),
        num_impressions: ranking.num_impressions,
        auc_excluded: ranking.auc_excluded,
        ndcg_excluded: ranking.ndcg_excluded,
        mode: provenance.mode.clone(),
        lambda: provenance.lambda,
        seed: provenance.seed,
    })
}
