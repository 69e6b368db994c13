//! Ranking, metric and serendipity invariants.

use conv4rec::dataset::{ObservedDataset, RatingScale, Triple};
use conv4rec::evaluation::{
    lambda_grid, metric_report, rank_with_lambda, recall_at_k, rmse, serendipity_report,
    tune_lambda_per_user, Exclusions, Predictions,
};
use conv4rec::numerics::{Matrix, Rng};
use proptest::prelude::*;

/// Builds `G` from per-cell interaction probabilities and rating conditionals.
fn preds_from(inter: &[Vec<f64>], cond: &[Vec<Vec<f64>>], scale: &RatingScale) -> Predictions {
    let m = inter.len();
    let n = inter[0].len();
    let k = scale.k();
    let probs = Matrix::from_fn(m, n * (k + 1), |u, c| {
        let (j, ch) = (c / (k + 1), c % (k + 1));
        if ch == 0 {
            1.0 - inter[u][j]
        } else {
            inter[u][j] * cond[u][j][ch - 1]
        }
    });
    Predictions::from_probabilities(n, scale.clone(), probs).unwrap()
}

fn random_preds(
    m: usize,
    n: usize,
    k: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Predictions) {
    let scale = RatingScale::integer(k).unwrap();
    let mut rng = Rng::new(seed);
    let inter: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.uniform_range(0.01, 0.99)).collect())
        .collect();
    let cond: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let w: Vec<f64> = (0..k).map(|_| rng.uniform() + 1e-3).collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|v| v / s).collect()
                })
                .collect()
        })
        .collect();
    let preds = preds_from(&inter, &cond, &scale);
    (inter, cond, preds)
}

fn random_split(m: usize, n: usize, k: usize, seed: u64) -> (ObservedDataset, ObservedDataset) {
    let mut rng = Rng::new(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for user in 0..m {
        for item in 0..n {
            let t = Triple {
                user,
                item,
                rating: 1 + rng.index(k),
            };
            match rng.index(4) {
                0 => train.push(t),
                1 => test.push(t),
                _ => {}
            }
        }
    }
    let scale = RatingScale::integer(k).unwrap();
    (
        ObservedDataset::from_triples(m, n, scale.clone(), train).unwrap(),
        ObservedDataset::from_triples(m, n, scale, test).unwrap(),
    )
}

#[test]
fn rmse_matches_brute_force() {
    let (_, _, preds) = random_preds(6, 9, 5, 1);
    let (_, test) = random_split(6, 9, 5, 2);
    let mut sq = 0.0;
    for t in &test.triples {
        let g = preds.cell(t.user, t.item);
        let tail: f64 = g[1..].iter().sum();
        let f: f64 = (1..=5).map(|c| c as f64 * g[c] / tail).sum();
        sq += (f - t.rating as f64).powi(2);
    }
    let oracle = (sq / test.len() as f64).sqrt();
    assert!((rmse(&preds, &test).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn toy_recall_half() {
    // m=1, n=5; test items 1 and 3; scores put item 1 in the top 2 but not item 3
    let scale = RatingScale::integer(2).unwrap();
    let inter = vec![vec![0.9, 0.8, 0.1, 0.2, 0.3]];
    let cond = vec![vec![vec![0.5, 0.5]; 5]];
    let preds = preds_from(&inter, &cond, &scale);
    let empty = ObservedDataset::from_triples(1, 5, scale.clone(), vec![]).unwrap();
    let test = ObservedDataset::from_triples(
        1,
        5,
        scale,
        vec![
            Triple {
                user: 0,
                item: 1,
                rating: 1,
            },
            Triple {
                user: 0,
                item: 3,
                rating: 2,
            },
        ],
    )
    .unwrap();
    let r = recall_at_k(&preds, &Exclusions::new(&empty), &test, 2, false).unwrap();
    assert_eq!(r, 0.5);
}

#[test]
fn explicit_dominant_user_picks_largest_lambda() {
    // validation item has the lowest interaction but the best rating
    let scale = RatingScale::integer(5).unwrap();
    let n = 60;
    let inter: Vec<f64> = (0..n)
        .map(|j| {
            if j == 0 {
                0.01
            } else {
                0.5 + j as f64 / 1000.0
            }
        })
        .collect();
    let cond: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            if j == 0 {
                vec![0.0, 0.0, 0.0, 0.0, 1.0]
            } else {
                vec![0.2; 5]
            }
        })
        .collect();
    let preds = preds_from(&[inter], &[cond], &scale);
    let empty = ObservedDataset::from_triples(1, n, scale.clone(), vec![]).unwrap();
    let val = ObservedDataset::from_triples(
        1,
        n,
        scale,
        vec![Triple {
            user: 0,
            item: 0,
            rating: 5,
        }],
    )
    .unwrap();
    let report = tune_lambda_per_user(&preds, &Exclusions::new(&empty), &val).unwrap();
    let chosen = report.per_user[0].1;
    // the smallest grid λ that lifts item 0 into the top 50
    let grid = lambda_grid();
    let first = grid
        .iter()
        .copied()
        .find(|&l| {
            let top = rank_with_lambda(&preds, &Exclusions::new(&empty), 0, l).unwrap();
            top[..50].contains(&0)
        })
        .unwrap();
    assert_eq!(chosen, first);
    assert!(chosen > 0.0);
    assert_eq!(*grid.last().unwrap(), 1e3);
}

#[test]
fn metric_report_carries_both_cold_user_treatments() {
    let (_, _, preds) = random_preds(3, 6, 2, 4);
    let scale = RatingScale::integer(2).unwrap();
    let t = |user, item, rating| Triple { user, item, rating };
    // user 2 has no training entries
    let train =
        ObservedDataset::from_triples(3, 6, scale.clone(), vec![t(0, 0, 1), t(1, 1, 2)]).unwrap();
    let test = ObservedDataset::from_triples(
        3,
        6,
        scale.clone(),
        vec![t(0, 2, 2), t(1, 3, 1), t(2, 4, 2)],
    )
    .unwrap();
    let warm = ObservedDataset::from_triples(3, 6, scale, vec![t(0, 2, 2), t(1, 3, 1)]).unwrap();
    let excl = Exclusions::new(&train);
    let all = metric_report(&preds, &excl, &test, &[2], false).unwrap();
    let skipped = metric_report(&preds, &excl, &test, &[2], true).unwrap();
    assert_eq!(all.rmse, rmse(&preds, &test).unwrap());
    assert_eq!(skipped.rmse, rmse(&preds, &warm).unwrap());
    assert_eq!(all.alternate.rmse, Some(skipped.rmse));
    assert_eq!(skipped.alternate.rmse, Some(all.rmse));
    assert_eq!(
        skipped.recall[&2],
        recall_at_k(&preds, &excl, &test, 2, true).unwrap()
    );
    assert_eq!(all.alternate.recall[&2], Some(skipped.recall[&2]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn recall_invariant_under_monotone_transform(seed in 0u64..1000, k in 1usize..20, power in 0.2f64..4.0) {
        let (inter, cond, preds) = random_preds(5, 25, 3, seed);
        let (train, test) = random_split(5, 25, 3, seed + 1);
        let scale = RatingScale::integer(3).unwrap();
        let warped: Vec<Vec<f64>> = inter.iter().map(|r| r.iter().map(|v| v.powf(power)).collect()).collect();
        let preds2 = preds_from(&warped, &cond, &scale);
        let excl = Exclusions::new(&train);
        let a = recall_at_k(&preds, &excl, &test, k, false).unwrap();
        let b = recall_at_k(&preds2, &excl, &test, k, false).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn lambda_limits_recover_both_orders(seed in 0u64..1000) {
        let (_, _, preds) = random_preds(1, 15, 4, seed);
        let (train, _) = random_split(1, 15, 4, seed);
        let excl = Exclusions::new(&train);
        let sort_by = |key: &dyn Fn(usize) -> f64| {
            let mut items: Vec<usize> = (0..15).filter(|&j| !excl.is_excluded(0, j)).collect();
            items.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
            items
        };
        let implicit = sort_by(&|j| preds.interaction(0, j));
        let explicit = sort_by(&|j| preds.prediction(0, j));
        prop_assert_eq!(rank_with_lambda(&preds, &excl, 0, 0.0).unwrap(), implicit);
        prop_assert_eq!(rank_with_lambda(&preds, &excl, 0, 1e9).unwrap(), explicit);
    }

    #[test]
    fn serendipity_respects_filter_and_exclusions(seed in 0u64..1000, pct in 0.05f64..0.95) {
        let (_, _, preds) = random_preds(3, 20, 5, seed);
        let (train, _) = random_split(3, 20, 5, seed);
        let excl = Exclusions::new(&train);
        for u in 0..3 {
            let rep = serendipity_report(&preds, &excl, u, pct).unwrap();
            let mut last = f64::INFINITY;
            for &(j, i, f) in &rep.items {
                prop_assert!(!excl.is_excluded(u, j));
                prop_assert!(i <= rep.threshold);
                prop_assert!(f <= last);
                last = f;
            }
        }
    }
}
