use super::matrix::{dot, norm2, Matrix};
use super::rng::Rng;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 10_000;
const START_SEED: u64 = 0x5eed_5eed;

/// Largest singular value by power iteration on `WᵀW`.
///
/// The start vector is drawn from a fixed seed; if it lands in the null
/// space the iteration restarts from the next seed. Iteration stops once
/// the eigen-residual `‖WᵀWv − λv‖` drops below `tol·λ` or after 10⁴ steps.
pub fn spectral_norm(w: &Matrix, tol: f64) -> f64 {
    if w.is_empty() || w.max_abs() == 0.0 {
        return 0.0;
    }
    if w.cols() == 1 || w.rows() == 1 {
        return w.frobenius_norm();
    }
    // Iterate on the smaller Gram matrix.
    let owned;
    let w = if w.rows() < w.cols() {
        owned = w.transpose();
        &owned
    } else {
        w
    };
    let mut restart = 0u64;
    loop {
        let mut rng = Rng::new(START_SEED + restart);
        let mut v = rng.unit_vector(w.cols());
        let mut lambda = 0.0;
        let mut converged = false;
        for _ in 0..MAX_ITERATIONS {
            let wv = w.mul_vec(&v).expect("shape checked");
            let gram_v = w.mul_vec_transposed(&wv).expect("shape checked");
            lambda = dot(&v, &gram_v);
            let norm = norm2(&gram_v);
            if norm == 0.0 {
                break;
            }
            let residual = gram_v
                .iter()
                .zip(&v)
                .map(|(g, x)| (g - lambda * x).powi(2))
                .sum::<f64>()
                .sqrt();
            v = gram_v.into_iter().map(|x| x / norm).collect();
            if residual <= tol * lambda {
                converged = true;
                break;
            }
        }
        if lambda > 0.0 || restart >= 8 {
            if !converged {
                // Final Rayleigh quotient from the last normalized iterate.
                let wv = w.mul_vec(&v).expect("shape checked");
                lambda = lambda.max(dot(&wv, &wv));
            }
            return lambda.max(0.0).sqrt();
        }
        restart += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let w = Matrix::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert!((spectral_norm(&w, DEFAULT_TOLERANCE) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn nilpotent_matrix() {
        let w = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        assert!((spectral_norm(&w, DEFAULT_TOLERANCE) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        assert_eq!(spectral_norm(&Matrix::zeros(3, 4), DEFAULT_TOLERANCE), 0.0);
    }

    #[test]
    fn vectors_use_euclidean_norm() {
        let w = Matrix::from_rows(&[&[3.0, 4.0]]).unwrap();
        assert!((spectral_norm(&w, DEFAULT_TOLERANCE) - 5.0).abs() < 1e-15);
        assert!((spectral_norm(&w.transpose(), DEFAULT_TOLERANCE) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn repeated_top_singular_value() {
        let w = Matrix::identity(5);
        assert!((spectral_norm(&w, DEFAULT_TOLERANCE) - 1.0).abs() < 1e-12);
    }
}
