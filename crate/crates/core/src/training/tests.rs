use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Tape;
use crate::data::{
    generate_synthetic, split_dataset, Dataset, Impression, NewsItem, SplitOrder, SynthConfig,
    UserRecord,
};
use crate::model::{Distribution, ModelParams, Reversal};

fn dist(p: &[f64]) -> Distribution {
    Distribution::new(p.to_vec()).unwrap()
}

#[test]
fn mode_names_round_trip() {
    for m in Mode::ALL {
        assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
    }
    assert_eq!("fairrank-no-kl".parse::<Mode>().unwrap(), Mode::FairRankNoKl);
    assert!(matches!("gan".parse::<Mode>(), Err(crate::Error::Config(_))));
}

#[test]
fn no_invariant_mode_trains_like_al() {
    let a = Mode::FairRankNoInvariant;
    let b = Mode::Al;
    assert_eq!(
        (a.adversarial(), a.invariant_branch(), a.kl(), a.user_model()),
        (b.adversarial(), b.invariant_branch(), b.kl(), b.user_model())
    );
}

fn fixture(impressions: Vec<Vec<(usize, bool)>>) -> Dataset {
    let news = (0..12)
        .map(|i| NewsItem {
            news_id: format!("N{i}"),
            category_id: i % 2,
            title_tokens: vec![2 + i % 3],
        })
        .collect();
    let impressions = impressions
        .into_iter()
        .enumerate()
        .map(|(k, items)| Impression {
            impression_id: format!("I{k}"),
            ordinal: k,
            items,
            split: Some(Split::Train),
        })
        .collect();
    Dataset {
        news,
        users: vec![UserRecord {
            user_id: "U0".into(),
            attribute: 1,
            history: vec![0, 1],
            impressions,
        }],
        vocab: ["<pad>", "<unk>", "a", "b", "c"].map(String::from).to_vec(),
        categories: vec!["x".into(), "y".into()],
        num_attribute_classes: 2,
    }
}

use crate::data::Split;

#[test]
fn single_click_with_four_negatives_uses_all_of_them() {
    let d = fixture(vec![vec![(2, true), (3, false), (4, false), (5, false), (6, false)]]);
    let set = build_training_samples(&d, 4, 0).unwrap();
    assert_eq!(set.samples.len(), 1);
    let mut negs = set.samples[0].negatives.clone();
    negs.sort();
    assert_eq!(negs, vec![3, 4, 5, 6]);
    assert_eq!(set.samples[0].positive, 2);
    assert_eq!(set.samples[0].attribute, 1);
}

#[test]
fn one_sample_per_click() {
    let d = fixture(vec![vec![(2, true), (3, true), (4, true), (5, false), (6, false)]]);
    let set = build_training_samples(&d, 4, 0).unwrap();
    assert_eq!(set.samples.len(), 3);
    for s in &set.samples {
        assert_eq!(s.negatives.len(), 4);
        assert!(s.negatives.iter().all(|n| [5, 6].contains(n)), "with replacement from unclicked");
    }
}

#[test]
fn impressions_without_negatives_are_tallied() {
    let d = fixture(vec![vec![(2, true), (3, true)], vec![(4, true), (5, false)]]);
    let set = build_training_samples(&d, 4, 0).unwrap();
    assert_eq!(set.samples.len(), 1);
    assert_eq!(set.skipped_no_negatives, 2);
}

#[test]
fn non_training_impressions_are_ignored() {
    let mut d = fixture(vec![vec![(2, true), (3, false)], vec![(4, true), (5, false)]]);
    d.users[0].impressions[1].split = Some(Split::Test);
    assert_eq!(build_training_samples(&d, 2, 0).unwrap().samples.len(), 1);
}

#[test]
fn random_news_is_uniform_over_the_catalog() {
    let d = generate_synthetic(&SynthConfig {
        num_users: 1500,
        num_news: 800,
        clicks_target: 2,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let d = split_dataset(d, 0.9, 0.05, SplitOrder::Temporal, 0).unwrap();
    let set = build_training_samples(&d, 4, 17).unwrap();
    assert!(set.samples.len() >= 10_000);
    let n = 10_000usize;
    let c = d.num_categories();
    let mut catalog = vec![0usize; c];
    d.news.iter().for_each(|x| catalog[x.category_id] += 1);
    let mut seen = vec![0usize; c];
    set.samples[..n]
        .iter()
        .for_each(|s| seen[d.news[s.random_news].category_id] += 1);
    for k in 0..c {
        let p = catalog[k] as f64 / d.news.len() as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        let dev = (seen[k] as f64 - n as f64 * p).abs();
        assert!(dev <= 3.0 * sd, "category {k}: {} vs {}", seen[k], n as f64 * p);
    }
}

#[test]
fn sampling_is_deterministic() {
    let d = small_synth(30, 1);
    let a = build_training_samples(&d, 4, 5).unwrap();
    let b = build_training_samples(&d, 4, 5).unwrap();
    let c = build_training_samples(&d, 4, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn info_nce_examples() {
    assert!((info_nce_loss(0.3, &[0.3; 4]) - 5f64.ln()).abs() < 1e-12);
    assert!(info_nce_loss(20.0, &[0.0; 4]) < 1e-8);
    let expected = (1.0 + 4.0 * (-1f64).exp()).ln();
    assert!((info_nce_loss(2.0, &[1.0; 4]) - expected).abs() < 1e-14);
    assert!((expected - 0.90483).abs() < 1e-5);
    assert!(info_nce_loss(1000.0, &[-1000.0, 999.0]).is_finite());
}

#[test]
fn adversarial_loss_examples() {
    let u = dist(&[0.5, 0.5]);
    assert!((adversarial_loss(&u, &u, 0).unwrap() - 2f64.ln()).abs() < 1e-12);
    let hot = dist(&[0.0, 1.0]);
    assert!(adversarial_loss(&hot, &hot, 1).unwrap() <= 1e-11);
    let v = adversarial_loss(&dist(&[0.25, 0.75]), &u, 1).unwrap();
    assert!((v - 0.5 * (-(0.75f64.ln()) - 0.5f64.ln())).abs() < 1e-15);
    assert!((v - 0.49041).abs() < 1e-5);
    assert!(matches!(adversarial_loss(&u, &u, 2), Err(crate::Error::Contract(_))));
}

#[test]
fn kl_examples() {
    let u = dist(&[0.5, 0.5]);
    assert_eq!(kl_loss(&u, &u).unwrap(), 0.0);
    assert!((kl_loss(&dist(&[1.0, 0.0]), &u).unwrap() - 2f64.ln()).abs() < 1e-9);
    let v = kl_loss(&u, &dist(&[0.25, 0.75])).unwrap();
    assert!((v - (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln())).abs() < 1e-15);
    assert!((v - 0.14384).abs() < 1e-5);
}

#[test]
fn reported_total_follows_the_sign_convention() {
    let b = LossBreakdown::new(1.0, 0.6, 0.1, 0.5);
    assert!((b.l_total - 0.8).abs() < 1e-15);
    assert_eq!(LossBreakdown::new(1.3, 0.0, 0.0, 0.0).l_total, 1.3);
    let json = serde_json::to_value(b).unwrap();
    for key in ["L_R", "L_A", "L_D", "L_total"] {
        assert!(json.get(key).is_some(), "{json}");
    }
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

#[test]
fn tape_losses_match_plain_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let p = random_dist(&mut rng, 3);
        let q = random_dist(&mut rng, 3);
        let mut tape = Tape::new();
        let pv = tape.leaf(crate::autodiff::Tensor::row(p.clone()));
        let qv = tape.leaf(crate::autodiff::Tensor::row(q.clone()));
        let kl = tape_kl(&mut tape, pv, qv).unwrap();
        let ce = tape_cross_entropy(&mut tape, pv, 2).unwrap();
        assert!((tape.value(kl).item() - kl_loss(&dist(&p), &dist(&q)).unwrap()).abs() < 1e-14);
        assert!((tape.value(ce).item() - cross_entropy(&dist(&p), 2).unwrap()).abs() < 1e-14);

        let scores: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let vars: Vec<_> = scores.iter().map(|s| tape.leaf(crate::autodiff::Tensor::scalar(*s))).collect();
        let l = tape_info_nce(&mut tape, vars[0], &vars[1..]).unwrap();
        assert!((tape.value(l).item() - info_nce_loss(scores[0], &scores[1..])).abs() < 1e-14);
    }
}

proptest! {
    #[test]
    fn info_nce_is_shift_invariant(
        scores in proptest::collection::vec(-20.0f64..20.0, 2..8),
        shift in -100.0f64..100.0,
    ) {
        let a = info_nce_loss(scores[0], &scores[1..]);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let b = info_nce_loss(shifted[0], &shifted[1..]);
        prop_assert!((a - b).abs() < 1e-10);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = dist(&random_dist(&mut rng, n));
        let q = dist(&random_dist(&mut rng, n));
        prop_assert!(kl_loss(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kl_loss(&p, &p).unwrap(), 0.0);
    }
}

fn small_synth(users: usize, seed: u64) -> Dataset {
    let d = generate_synthetic(&SynthConfig {
        num_users: users,
        num_news: 120,
        num_categories: 4,
        vocab_per_category: 10,
        history_len_range: (0, 6),
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    split_dataset(d, 0.81, 0.09, SplitOrder::Temporal, seed).unwrap()
}

fn small_config(mode: Mode) -> TrainingConfig {
    TrainingConfig {
        mode,
        epochs: 2,
        learning_rate: 1e-3,
        architecture: crate::model::Architecture {
            d_tok: 6,
            d_cat: 3,
            d_h: 8,
            d_att: 5,
            d_d: 4,
            history_len: 6,
            max_title_len: 6,
            ..Default::default()
        },
        ..TrainingConfig::default()
    }
}

/// Gradients of the selected terms for every parameter.
fn gradients(
    d: &Dataset,
    params: &ModelParams,
    config: &TrainingConfig,
    samples: &[TrainingSample],
    reversal: Reversal,
    terms: Terms,
) -> Vec<(&'static str, Vec<f64>)> {
    let model = config.architecture.for_dataset(d);
    let mut tape = Tape::new();
    let g = batch_objective(&mut tape, params, &model, d, samples, config.mode, config.lambda, reversal, terms)
        .unwrap();
    tape.backward(g.objective).unwrap();
    params
        .named()
        .into_iter()
        .map(|(n, _)| n)
        .zip(params.grads(&tape, &g.bound).into_iter().map(|t| t.into_values()))
        .collect()
}

const ONLY_R: Terms = Terms { ranking: true, adversarial: false, kl: false };
const ONLY_A: Terms = Terms { ranking: false, adversarial: true, kl: false };
const ONLY_D: Terms = Terms { ranking: false, adversarial: false, kl: true };

#[test]
fn encoder_gradient_decomposes_by_sign() {
    let d = small_synth(12, 2);
    let samples = build_training_samples(&d, 4, 1).unwrap().samples;
    for lambda in [0.0, 0.5, 2.0] {
        let config = TrainingConfig { lambda, ..small_config(Mode::FairRank) };
        let model = config.architecture.for_dataset(&d);
        let params = ModelParams::init(&model, 4).unwrap();
        let full = gradients(&d, &params, &config, &samples, Reversal::Reverse, Terms::ALL);
        let r = gradients(&d, &params, &config, &samples, Reversal::Identity, ONLY_R);
        let a = gradients(&d, &params, &config, &samples, Reversal::Identity, ONLY_A);
        let kl = gradients(&d, &params, &config, &samples, Reversal::Identity, ONLY_D);
        for (i, (name, g)) in full.iter().enumerate() {
            let sign = if ModelParams::is_adversary(name) { 1.0 } else { -lambda };
            for (j, gv) in g.iter().enumerate() {
                let expected = r[i].1[j] + sign * a[i].1[j] + kl[i].1[j];
                let err = (gv - expected).abs() / expected.abs().max(gv.abs()).max(1e-300);
                assert!(err < 1e-8 || (gv - expected).abs() < 1e-15, "{name}[{j}] {gv} vs {expected}");
            }
        }
    }
}

#[test]
fn zero_lambda_leaves_ranking_plus_kl_for_the_encoder() {
    let d = small_synth(12, 2);
    let samples = build_training_samples(&d, 4, 1).unwrap().samples;
    let config = TrainingConfig { lambda: 0.0, ..small_config(Mode::FairRank) };
    let params = ModelParams::init(&config.architecture.for_dataset(&d), 4).unwrap();
    let full = gradients(&d, &params, &config, &samples, Reversal::Reverse, Terms::ALL);
    let base_cfg = TrainingConfig { lambda: 0.0, ..small_config(Mode::Base) };
    let base = gradients(&d, &params, &base_cfg, &samples, Reversal::Reverse, Terms::ALL);
    let kl = gradients(&d, &params, &config, &samples, Reversal::Reverse, ONLY_D);
    for (i, (name, g)) in full.iter().enumerate() {
        if ModelParams::is_adversary(name) {
            continue;
        }
        for (j, gv) in g.iter().enumerate() {
            let expected = base[i].1[j] + kl[i].1[j];
            assert!((gv - expected).abs() <= 1e-12 * expected.abs().max(1.0), "{name}");
        }
    }
}

#[test]
fn adversary_step_lowers_the_adversarial_loss() {
    let d = small_synth(20, 3);
    let samples = build_training_samples(&d, 4, 1).unwrap().samples;
    let config = small_config(Mode::FairRank);
    let model = config.architecture.for_dataset(&d);
    let mut params = ModelParams::init(&model, 9).unwrap();
    let l_a = |p: &ModelParams| {
        let mut tape = Tape::new();
        batch_objective(&mut tape, p, &model, &d, &samples, config.mode, 0.5, Reversal::Reverse, ONLY_A)
            .unwrap()
            .breakdown
            .l_a
    };
    let before = l_a(&params);
    let grads = gradients(&d, &params, &config, &samples, Reversal::Reverse, ONLY_A);
    for (t, (name, g)) in params.tensors_mut().into_iter().zip(&grads) {
        if ModelParams::is_adversary(name) {
            t.values_mut().iter_mut().zip(g).for_each(|(v, gv)| *v -= 1e-3 * gv);
        }
    }
    assert!(l_a(&params) < before);
}

#[test]
fn base_mode_reports_only_the_ranking_loss() {
    let d = small_synth(12, 2);
    let samples = build_training_samples(&d, 4, 1).unwrap().samples;
    let config = small_config(Mode::Base);
    let model = config.architecture.for_dataset(&d);
    let params = ModelParams::init(&model, 4).unwrap();
    let mut tape = Tape::new();
    let g = batch_objective(&mut tape, &params, &model, &d, &samples, Mode::Base, 0.5, Reversal::Reverse, Terms::ALL)
        .unwrap();
    assert_eq!(g.breakdown.l_a, 0.0);
    assert_eq!(g.breakdown.l_d, 0.0);
    assert_eq!(g.breakdown.l_total, g.breakdown.l_r);
}

#[test]
fn training_lowers_the_ranking_loss() {
    let d = small_synth(25, 4);
    let out = fit(&d, &small_config(Mode::Base)).unwrap();
    assert!((90..=110).contains(&out.samples_per_epoch), "{}", out.samples_per_epoch);
    assert!(out.log[1].losses.l_r < out.log[0].losses.l_r, "{:?}", out.log);
    assert!(out.log.iter().all(|r| r.val_auc.is_some()));
}

#[test]
fn training_is_deterministic() {
    let d = small_synth(25, 4);
    for mode in [Mode::FairRank, Mode::TwoTower] {
        let a = fit(&d, &small_config(mode)).unwrap();
        let b = fit(&d, &small_config(mode)).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(serde_json::to_string(&a.log).unwrap(), serde_json::to_string(&b.log).unwrap());
    }
}

#[test]
fn fair_rank_log_carries_all_terms() {
    let d = small_synth(25, 4);
    let out = fit(&d, &small_config(Mode::FairRank)).unwrap();
    let line = serde_json::to_value(&out.log[0]).unwrap();
    for key in ["epoch", "L_R", "L_A", "L_D", "L_total", "val_AUC"] {
        assert!(line.get(key).is_some(), "{line}");
    }
    assert!(out.log[0].losses.l_a > 0.0 && out.log[0].losses.l_d > 0.0);
}

#[test]
fn divergence_is_reported() {
    let d = small_synth(25, 4);
    let config = TrainingConfig { learning_rate: 1e300, lambda: 1e300, ..small_config(Mode::FairRank) };
    assert!(matches!(fit(&d, &config), Err(crate::Error::Divergence { epoch: 1, .. })));
}

#[test]
fn invalid_configs_are_rejected() {
    let d = small_synth(25, 4);
    for config in [
        TrainingConfig { lambda: -1.0, ..small_config(Mode::FairRank) },
        TrainingConfig { batch_size: 0, ..small_config(Mode::FairRank) },
        TrainingConfig { learning_rate: 0.0, ..small_config(Mode::FairRank) },
    ] {
        assert!(matches!(fit(&d, &config), Err(crate::Error::Config(_))));
    }
}
