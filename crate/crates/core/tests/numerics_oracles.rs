//! Independent oracles for the numerics kernels.

use conv4rec::numerics::{
    gemm_nn, gemm_nt, gemm_tn, log_sum_exp, spectral_norm, stable_softmax, Matrix, Rng,
    SPECTRAL_TOLERANCE,
};
use proptest::prelude::*;

/// Singular values by one-sided Jacobi rotations on the columns.
fn jacobi_singular_values(w: &Matrix) -> Vec<f64> {
    let (rows, cols) = w.shape();
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| w.get(i, j)).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|v| v * v).sum();
                let beta: f64 = a[q].iter().map(|v| v * v).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[p][i], a[q][i]);
                    a[p][i] = c * x - s * y;
                    a[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

#[test]
fn spectral_norm_matches_jacobi_svd() {
    for (seed, (rows, cols)) in [(3, 3), (5, 2), (2, 7), (12, 9), (1, 6), (30, 4)]
        .into_iter()
        .enumerate()
    {
        let w = random_matrix(rows, cols, seed as u64);
        let oracle = jacobi_singular_values(&w)[0];
        let got = spectral_norm(&w, SPECTRAL_TOLERANCE);
        assert!(
            (got - oracle).abs() <= 1e-8 * oracle,
            "{rows}x{cols}: {got} vs {oracle}"
        );
    }
}

#[test]
fn spectral_norm_of_diagonal_and_rank_one() {
    let d = Matrix::from_rows(&[&[3.0, 0.0, 0.0], &[0.0, -7.0, 0.0], &[0.0, 0.0, 2.0]]).unwrap();
    assert!((spectral_norm(&d, SPECTRAL_TOLERANCE) - 7.0).abs() < 1e-9);
    // u vᵀ has norm ‖u‖‖v‖
    let u = [1.0, 2.0, 2.0];
    let v = [3.0, 4.0];
    let r1 = Matrix::from_fn(3, 2, |i, j| u[i] * v[j]);
    assert!((spectral_norm(&r1, SPECTRAL_TOLERANCE) - 15.0).abs() < 1e-9);
}

fn naive(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize) -> Vec<f64> {
    let mut out = vec![0.0; ar * bc];
    for i in 0..ar {
        for j in 0..bc {
            for t in 0..ac {
                out[i * bc + j] += a[i * ac + t] * b[t * bc + j];
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

#[test]
fn gemm_variants_match_triple_loop() {
    let (m, k, n) = (13, 70, 9);
    let a = random_matrix(m, k, 1).into_vec();
    let b = random_matrix(k, n, 2).into_vec();
    let expect = naive(&a, m, k, &b, n);
    let close = |got: &[f64]| {
        got.iter()
            .zip(&expect)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()))
    };
    assert!(close(&gemm_nn(&a, m, k, &b, n)));
    assert!(close(&gemm_nt(&a, m, k, &transpose(&b, k, n), n)));
    assert!(close(&gemm_tn(&transpose(&a, m, k), k, m, &b, n)));
}

#[test]
fn two_class_softmax_is_logistic() {
    for (a, b) in [(0.0, 0.0), (1.5, -2.0), (-700.0, 30.0), (800.0, 799.0)] {
        let s = stable_softmax(&[a, b]).unwrap();
        let expect = 1.0 / (1.0 + f64::exp(b - a));
        assert!((s[0] - expect).abs() < 1e-15, "{a},{b}: {s:?}");
        assert!((s[0] + s[1] - 1.0).abs() < 1e-15);
    }
}

#[test]
fn log_sum_exp_survives_huge_scores() {
    let v = log_sum_exp(&[1000.0, 1000.0]);
    assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    assert!(log_sum_exp(&[-1e308, 0.0]).abs() < 1e-15);
}

#[test]
fn rng_replays_first_ten_thousand_draws() {
    let mut a = Rng::new(42);
    let mut b = Rng::new(42);
    for _ in 0..10_000 {
        assert_eq!(a.next_u64(), b.next_u64());
    }
    let mut c = Rng::new(43);
    assert_ne!(Rng::new(42).next_u64(), c.next_u64());
}

proptest! {
    #[test]
    fn softmax_shift_invariant(x in prop::collection::vec(-50.0f64..50.0, 1..12), c in -1e3f64..1e3) {
        let a = stable_softmax(&x).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let b = stable_softmax(&shifted).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn spectral_norm_transpose_invariant(rows in 1usize..8, cols in 1usize..8, seed in 0u64..1000) {
        let w = random_matrix(rows, cols, seed);
        let a = spectral_norm(&w, SPECTRAL_TOLERANCE);
        let b = spectral_norm(&w.transpose(), SPECTRAL_TOLERANCE);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn spectral_norm_bounds_unit_probes(rows in 1usize..8, cols in 1usize..8, seed in 0u64..1000) {
        let w = random_matrix(rows, cols, seed);
        let s = spectral_norm(&w, SPECTRAL_TOLERANCE);
        let mut rng = Rng::new(seed ^ 0xabc);
        for _ in 0..20 {
            let v = rng.unit_vector(cols);
            let wv = w.mul_vec(&v).unwrap();
            let n = wv.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(n <= s + 1e-9);
        }
    }
}
