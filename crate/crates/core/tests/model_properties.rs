//! Property tests for ingestion and the forward pass.

use std::collections::BTreeMap;

use conv4rec::dataset::{load_ratings, split, ObservedDataset, RatingScale, SplitSpec, Triple};
use conv4rec::model::{
    conditional_identity_check, expected_rating, forward, init_params, prediction_jacobian,
    Architecture, ModelSpec,
};
use conv4rec::numerics::{stable_softmax, Matrix, Rng};
use conv4rec::theory::decode_with;
use proptest::prelude::*;

fn random_dataset(m: usize, n: usize, k: usize, density: f64, seed: u64) -> ObservedDataset {
    let mut rng = Rng::new(seed);
    let mut triples = Vec::new();
    for user in 0..m {
        for item in 0..n {
            if rng.uniform() < density {
                triples.push(Triple {
                    user,
                    item,
                    rating: 1 + rng.index(k),
                });
            }
        }
    }
    ObservedDataset::from_triples(m, n, RatingScale::integer(k).unwrap(), triples).unwrap()
}

fn params(n: usize, k: usize, depth: usize, bias: bool, seed: u64) -> conv4rec::model::ModelParams {
    let spec = ModelSpec::standard(&Architecture {
        n,
        k,
        r: 3,
        depth,
        width: 4,
        bias,
    })
    .unwrap();
    let mut p = init_params(&spec, seed);
    // non-zero biases so they take part in the forward pass
    let mut rng = Rng::new(seed + 1);
    for l in p.encoder.iter_mut().chain(p.decoder.iter_mut()) {
        if let Some(b) = &mut l.bias {
            b.as_mut_slice().iter_mut().for_each(|v| *v = rng.normal());
        }
    }
    p
}

#[test]
fn one_hot_rows_sum_to_one() {
    let data = random_dataset(9, 14, 4, 0.3, 5);
    for u in 0..data.m {
        let dense = data.user_slice(u).unwrap().dense();
        for j in 0..data.n {
            let row = dense.row(j);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }
}

#[test]
fn save_load_round_trip() {
    let data = random_dataset(7, 11, 5, 0.4, 9);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tsv");
    data.save(&a).unwrap();
    let first = load_ratings(&a, Some(data.scale.clone())).unwrap();
    let b = dir.path().join("b.tsv");
    first.save(&b).unwrap();
    let second = load_ratings(&b, Some(data.scale.clone())).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.triples.len(), data.triples.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_partitions_the_triples(m in 2usize..12, n in 2usize..12, seed in 0u64..500, stratified: bool) {
        let data = random_dataset(m, n, 3, 0.6, seed);
        prop_assume!(data.len() >= 8);
        let spec = SplitSpec { train: 0.5, validation: 0.25, test: 0.25, seed, stratified };
        let s = split(&data, &spec).unwrap();
        let mut count: BTreeMap<(usize, usize, usize), i32> = BTreeMap::new();
        for t in &data.triples {
            *count.entry((t.user, t.item, t.rating)).or_default() += 1;
        }
        let mut cells = std::collections::HashSet::new();
        for part in [&s.train, &s.validation, &s.test] {
            for t in &part.triples {
                *count.entry((t.user, t.item, t.rating)).or_default() -= 1;
                prop_assert!(cells.insert((t.user, t.item)), "cell in two parts");
            }
        }
        prop_assert!(count.values().all(|&c| c == 0));
    }

    #[test]
    fn probabilities_are_row_stochastic(seed in 0u64..200, depth in 1usize..4, bias: bool) {
        let data = random_dataset(3, 6, 4, 0.5, seed);
        let p = params(6, 4, depth, bias, seed);
        for u in 0..3 {
            let out = forward(&p, &data.user_slice(u).unwrap(), &data.scale).unwrap();
            for j in 0..6 {
                let g = out.probabilities.row(j);
                prop_assert!((g.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!((out.conditional.row(j).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(out.prediction[j] >= 1.0 && out.prediction[j] <= 4.0);
            }
        }
    }

    #[test]
    fn prediction_stays_in_scale_range(g in prop::collection::vec(-40.0f64..40.0, 6)) {
        let scale = RatingScale::new(vec![0.5, 1.0, 2.5, 4.0, 4.5]).unwrap();
        let probs = stable_softmax(&g).unwrap();
        let c = conv4rec::model::conditional_from_probabilities(&probs);
        let f = expected_rating(&c, &scale);
        prop_assert!((0.5..=4.5).contains(&f));
    }

    #[test]
    fn decoder_items_are_independent(seed in 0u64..200, item in 0usize..5, other in 0usize..5) {
        prop_assume!(item != other);
        let p = params(5, 2, 3, false, seed);
        let spec = &p.spec.decoder;
        let weights: Vec<Matrix> = p.decoder.iter().map(|l| l.weight.clone()).collect();
        let mut rng = Rng::new(seed);
        let z: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let base = decode_with(spec, &weights, &z).unwrap();
        // perturb only the expand rows that feed `other`
        let mut moved = weights.clone();
        let width = spec.layers[0].output;
        for row in other * width..(other + 1) * width {
            for c in 0..moved[0].cols() {
                let v = moved[0].get(row, c);
                moved[0].set(row, c, v + rng.normal());
            }
        }
        let after = decode_with(spec, &moved, &z).unwrap();
        let k1 = 3;
        prop_assert_eq!(&base[item * k1..(item + 1) * k1], &after[item * k1..(item + 1) * k1]);
    }
}

#[test]
fn conditional_identity_on_random_rows() {
    let mut rng = Rng::new(77);
    for _ in 0..10_000 {
        let len = 2 + rng.index(9);
        let g: Vec<f64> = (0..len).map(|_| 20.0 * rng.normal()).collect();
        assert!(conditional_identity_check(&g), "{g:?}");
    }
}

#[test]
fn jacobian_l1_bounded_by_span() {
    let scale = RatingScale::integer(5).unwrap();
    let mut rng = Rng::new(3);
    let h = 1e-6;
    let f_of = |g: &[f64]| {
        let probs = stable_softmax(g).unwrap();
        expected_rating(
            &conv4rec::model::conditional_from_probabilities(&probs),
            &scale,
        )
    };
    for _ in 0..10_000 {
        let g: Vec<f64> = (0..6).map(|_| 4.0 * rng.normal()).collect();
        let jac = prediction_jacobian(&g, &scale).unwrap();
        let l1: f64 = jac.iter().map(|v| v.abs()).sum();
        assert!(l1 <= scale.span() + 1e-9, "{l1}");
        // finite differences agree with the analytic Jacobian
        for (kappa, &d) in jac.iter().enumerate() {
            let mut up = g.clone();
            up[kappa + 1] += h;
            let mut down = g.clone();
            down[kappa + 1] -= h;
            let fd = (f_of(&up) - f_of(&down)) / (2.0 * h);
            assert!((fd - d).abs() < 1e-6, "{fd} vs {d}");
        }
    }
}
