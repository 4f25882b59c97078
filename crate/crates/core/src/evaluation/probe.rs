use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{balanced_accuracy, ranking_order};
use super::parallel_map;
use crate::data::{Dataset, Split, UserRecord};
use crate::error::{Error, Result};
use crate::model::{Ranker, UserHistory};

/// Anything that can rank a candidate pool for a user and expose a vector
/// representation per news item.
pub trait ProbeRanker: Sync {
    fn representation(&self, news: usize) -> &[f64];
    fn score_pool(&self, user: &UserRecord, pool: &[usize]) -> Vec<f64>;
}

impl ProbeRanker for Ranker<'_> {
    fn representation(&self, news: usize) -> &[f64] {
        self.news_vector(news)
    }

    fn score_pool(&self, user: &UserRecord, pool: &[usize]) -> Vec<f64> {
        let history = UserHistory::from_clicks(&user.history, self.history_len());
        self.score_items(&history, pool)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub pool_size: usize,
    pub k_values: Vec<usize>,
    pub probe_train_fraction: f64,
    pub probe_seed: u64,
    /// Repetitions with seeds `probe_seed, probe_seed + 1, ...`.
    pub num_seeds: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            pool_size: 100,
            k_values: vec![10, 20],
            probe_train_fraction: 0.7,
            probe_seed: 0,
            num_seeds: 5,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self, catalog_size: usize) -> Result<()> {
        if self.k_values.is_empty() || self.num_seeds == 0 {
            return Err(Error::Config("probe needs k values and at least one seed".into()));
        }
        if let Some(k) = self.k_values.iter().find(|k| **k == 0 || **k > self.pool_size) {
            return Err(Error::Contract(format!(
                "probe k={k} must lie in 1..={}",
                self.pool_size
            )));
        }
        if self.pool_size > catalog_size {
            return Err(Error::Config(format!(
                "probe pool of {} exceeds the catalog of {catalog_size}",
                self.pool_size
            )));
        }
        if !(self.probe_train_fraction > 0.0 && self.probe_train_fraction < 1.0) {
            return Err(Error::Config("probe_train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub k_values: Vec<usize>,
    /// Balanced accuracy per k, averaged over seeds.
    pub accuracy: Vec<f64>,
    /// `per_seed[s][j]` is the accuracy of seed `s` at `k_values[j]`.
    pub per_seed: Vec<Vec<f64>>,
}

impl ProbeResult {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.k_values.iter().position(|v| *v == k).map(|j| self.accuracy[j])
    }
}

/// Users whose impressions include the test split; every user when the
/// dataset carries no split tags.
pub fn probe_users(dataset: &Dataset) -> Vec<usize> {
    let tagged = dataset
        .users
        .iter()
        .any(|u| u.impressions.iter().any(|i| i.split.is_some()));
    (0..dataset.users.len())
        .filter(|&u| !tagged || dataset.users[u].impressions_in(Split::Test).next().is_some())
        .collect()
}

/// Attribute leakage of a ranker: for each test user, rank a uniform pool
/// of catalog items, represent the user by the mean representation of the
/// top k, and measure how well a softmax classifier recovers the attribute
/// on held-out users. Lower is fairer.
pub fn fairness_probe<R: ProbeRanker>(
    ranker: &R,
    dataset: &Dataset,
    config: &ProbeConfig,
    threads: usize,
) -> Result<ProbeResult> {
    config.validate(dataset.news.len())?;
    let users = probe_users(dataset);
    let labels: Vec<usize> = users.iter().map(|&u| dataset.users[u].attribute).collect();
    let classes = dataset.num_attribute_classes;
    let mut per_seed = Vec::with_capacity(config.num_seeds);
    for s in 0..config.num_seeds {
        let seed = config.probe_seed.wrapping_add(s as u64);
        // features[i][j]: representation of user i at k_values[j]
        let features = parallel_map(&users, threads, |&u| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u as u64 + 1);
            let pool = index::sample(&mut rng, dataset.news.len(), config.pool_size).into_vec();
            let scores = ranker.score_pool(&dataset.users[u], &pool);
            let order = ranking_order(&scores);
            config
                .k_values
                .iter()
                .map(|&k| mean_representation(ranker, order[..k].iter().map(|&i| pool[i])))
                .collect::<Vec<_>>()
        });
        let mut row = Vec::with_capacity(config.k_values.len());
        for j in 0..config.k_values.len() {
            let x: Vec<Vec<f64>> = features.iter().map(|f| f[j].clone()).collect();
            row.push(probe_accuracy(&x, &labels, classes, config.probe_train_fraction, seed)?);
        }
        per_seed.push(row);
    }
    let accuracy = (0..config.k_values.len())
        .map(|j| per_seed.iter().map(|r| r[j]).sum::<f64>() / per_seed.len() as f64)
        .collect();
    Ok(ProbeResult {
        k_values: config.k_values.clone(),
        accuracy,
        per_seed,
    })
}

fn mean_representation<R: ProbeRanker>(ranker: &R, items: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for i in items {
        let r = ranker.representation(i);
        if sum.is_empty() {
            sum = vec![0.0; r.len()];
        }
        sum.iter_mut().zip(r).for_each(|(s, v)| *s += v);
        n += 1;
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    sum
}

/// Held-out balanced accuracy of a softmax classifier predicting `labels`
/// from `features`. Users are shuffled with `seed` and the first
/// `train_fraction` train the classifier.
pub fn probe_accuracy(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (train_fraction * features.len() as f64).round() as usize;
    let (train, test) = order.split_at(n_train);
    for (name, part) in [("training", train), ("held-out", test)] {
        for c in 0..classes {
            let n = part.iter().filter(|&&i| labels[i] == c).count();
            if n < 10 {
                return Err(Error::Probe(format!(
                    "probe {name} split has {n} users of class {c}; at least 10 are required"
                )));
            }
        }
    }
    let pick = |idx: &[usize]| -> (Vec<&[f64]>, Vec<usize>) {
        (
            idx.iter().map(|&i| features[i].as_slice()).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let (x_train, y_train) = pick(train);
    let (x_test, y_test) = pick(test);
    let clf = SoftmaxClassifier::fit(&x_train, &y_train, classes);
    let predicted: Vec<usize> = x_test.iter().map(|x| clf.predict(x)).collect();
    Ok(balanced_accuracy(&y_test, &predicted, classes))
}

/// Multinomial logistic regression on standardized features, fitted on
/// class-weighted cross-entropy by full-batch Newton iterations with a
/// backtracking line search. Class 0 is the reference with logit 0.
pub struct SoftmaxClassifier {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `(classes - 1) x (dim + 1)`, bias last.
    weights: Vec<Vec<f64>>,
}

const MAX_ITERATIONS: usize = 200;
const TOLERANCE: f64 = 1e-7;
/// Keeps the Hessian invertible on separable or collinear data.
const RIDGE: f64 = 1e-8;

impl SoftmaxClassifier {
    pub fn fit(x: &[&[f64]], y: &[usize], classes: usize) -> Self {
        let n = x.len();
        let dim = x.first().map_or(0, |r| r.len());
        let mut mean = vec![0.0; dim];
        for r in x {
            mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v / n as f64);
        }
        let mut scale = vec![0.0; dim];
        for r in x {
            for ((s, v), m) in scale.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m).powi(2) / n as f64;
            }
        }
        // Constant features are zeroed rather than blown up.
        scale
            .iter_mut()
            .for_each(|s| *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 0.0 });
        let mut clf = Self {
            mean,
            scale,
            weights: vec![vec![0.0; dim + 1]; classes.saturating_sub(1)],
        };
        let z: Vec<Vec<f64>> = x.iter().map(|r| clf.standardize(r)).collect();
        let mut counts = vec![0usize; classes];
        y.iter().for_each(|&c| counts[c] += 1);
        let weight: Vec<f64> = counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / (classes * c) as f64 })
            .collect();

        let width = dim + 1;
        let size = (classes - 1) * width;
        let loss_at = |w: &[Vec<f64>]| -> f64 {
            z.iter()
                .zip(y)
                .map(|(row, &label)| -weight[label] * probs(w, row)[label].max(1e-300).ln())
                .sum()
        };
        let mut loss = loss_at(&clf.weights);
        for _ in 0..MAX_ITERATIONS {
            let mut grad = DVector::<f64>::zeros(size);
            let mut hess = DMatrix::<f64>::zeros(size, size);
            for (row, &label) in z.iter().zip(y) {
                let p = probs(&clf.weights, row);
                let cw = weight[label];
                for a in 1..classes {
                    let residual = cw * (p[a] - f64::from(u8::from(a == label)));
                    for (j, xv) in row.iter().enumerate() {
                        grad[(a - 1) * width + j] += residual * xv;
                    }
                    for b in a..classes {
                        let h = cw * p[a] * (f64::from(u8::from(a == b)) - p[b]);
                        for (j, xj) in row.iter().enumerate() {
                            let hx = h * xj;
                            let r = (a - 1) * width + j;
                            for (k, xk) in row.iter().enumerate().skip(if a == b { j } else { 0 }) {
                                hess[(r, (b - 1) * width + k)] += hx * xk;
                            }
                        }
                    }
                }
            }
            // Mirror the upper triangle.
            for r in 0..size {
                hess[(r, r)] += RIDGE;
                for c in r + 1..size {
                    hess[(c, r)] = hess[(r, c)];
                }
            }
            let direction = match hess.cholesky() {
                Some(ch) => ch.solve(&grad),
                None => grad.clone(),
            };
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial: Vec<Vec<f64>> = clf
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(a, wa)| {
                        wa.iter()
                            .enumerate()
                            .map(|(j, v)| v - t * direction[a * width + j])
                            .collect()
                    })
                    .collect();
                let l = loss_at(&trial);
                if l <= loss {
                    accepted = Some((trial, l));
                    break;
                }
                t *= 0.5;
            }
            let Some((w, l)) = accepted else { break };
            clf.weights = w;
            let change = loss - l;
            loss = l;
            if change < TOLERANCE {
                break;
            }
        }
        clf
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        let mut row: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect();
        row.push(1.0);
        row
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        ranking_order(&probs(&self.weights, &self.standardize(x)))[0]
    }
}

/// Class probabilities with class 0 as the zero-logit reference.
fn probs(w: &[Vec<f64>], row: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = std::iter::once(0.0)
        .chain(w.iter().map(|wc| wc.iter().zip(row).map(|(a, b)| a * b).sum()))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
