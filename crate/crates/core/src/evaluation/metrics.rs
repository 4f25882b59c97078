use std::cmp::Ordering;

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` when the labels hold a single class.
pub fn auc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    assert_eq!(labels.len(), scores.len(), "auc needs one score per label");
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney U with mid-ranks for tied scores.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let pos_f = pos as f64;
    Some((rank_sum - pos_f * (pos_f + 1.0) / 2.0) / (pos_f * neg as f64))
}

/// Item indices by descending score, ties broken by ascending index.
pub fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

/// Binary-gain nDCG over the top `k` positions. `None` without positives.
pub fn ndcg_at_k(labels: &[bool], scores: &[f64], k: usize) -> Option<f64> {
    assert_eq!(labels.len(), scores.len(), "ndcg needs one score per label");
    let pos = labels.iter().filter(|l| **l).count();
    if pos == 0 {
        return None;
    }
    let gain = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = ranking_order(scores)
        .into_iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| labels[*i])
        .map(|(r, _)| gain(r))
        .sum();
    let ideal: f64 = (0..pos.min(k)).map(gain).sum();
    Some(dcg / ideal)
}

/// Mean of per-recall over classes present in `truth`.
pub fn balanced_accuracy(truth: &[usize], predicted: &[usize], classes: usize) -> f64 {
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        totals[t] += 1;
        if t == p {
            hits[t] += 1;
        }
    }
    let recalls: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .filter(|(_, n)| **n > 0)
        .map(|(h, n)| *h as f64 / *n as f64)
        .collect();
    recalls.iter().sum::<f64>() / recalls.len() as f64
}
