//! Dense linear algebra, softmax, seeded randomness and the optimizer.

mod matrix;
mod nadam;
mod rng;
mod softmax;
mod spectral;

pub use matrix::{
    axpy, dot, gemm_nn, gemm_nt, gemm_tn, matmul, matmul_transa, matmul_transb, norm2, Matrix,
};
pub use nadam::{NadamConfig, NadamState};
pub use rng::Rng;
pub use softmax::{log_sum_exp, softmax_in_place, stable_softmax};
pub use spectral::{spectral_norm, DEFAULT_TOLERANCE as SPECTRAL_TOLERANCE};
