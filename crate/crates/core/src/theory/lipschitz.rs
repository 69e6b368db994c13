//! Empirical check of the decoder's joint Lipschitz bound in input and
//! weights.

use serde::{Deserialize, Serialize};

use super::norms::{layer_norm, layer_norm_kind, LayerNormKind};
use crate::error::{Error, Result};
use crate::model::{DecoderSpec, LayerKind, ModelParams};
use crate::numerics::{gemm_nt, norm2, Matrix, Rng};

/// Bias-free decoder evaluation `g_W(z)` for explicit weights.
pub fn decode_with(spec: &DecoderSpec, weights: &[Matrix], z: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != spec.layers.len() || z.len() != spec.r {
        return Err(Error::shape(
            "decode_with",
            format!(
                "{} weights for {} layers, input {} for r = {}",
                weights.len(),
                spec.layers.len(),
                z.len(),
                spec.r
            ),
        ));
    }
    let mut x = z.to_vec();
    for (l, w) in spec.layers.iter().zip(weights) {
        let (rows, cols) = l.weight_shape();
        if w.shape() != (rows, cols) {
            return Err(Error::shape(
                "decode_with",
                format!("weight {:?}, expected {:?}", w.shape(), (rows, cols)),
            ));
        }
        let s = match l.kind {
            LayerKind::Conv1x1 => x.len() / cols,
            _ => 1,
        };
        let mut y = gemm_nt(&x, s, cols, w.as_slice(), rows);
        if l.relu {
            for v in &mut y {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        x = y;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub trials: usize,
    /// Largest observed `‖Δg‖_∞ / bound`.
    pub max_ratio: f64,
    pub chi: f64,
    pub beta: f64,
    /// `ν` implied by the initialization.
    pub nu: f64,
}

/// `M + Σ b_ℓ D_ℓ` with `‖D_ℓ‖_ℓ = 1` and `Σ b_ℓ ≤ β`.
fn draw_weights(
    init: &[Matrix],
    kinds: &[LayerNormKind],
    beta: f64,
    rng: &mut Rng,
) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    let total = beta * rng.uniform();
    let shares: Vec<f64> = (0..init.len()).map(|_| rng.uniform() + 1e-12).collect();
    let sum: f64 = shares.iter().sum();
    let mut weights = Vec::with_capacity(init.len());
    let mut dirs = Vec::with_capacity(init.len());
    for ((m, &kind), share) in init.iter().zip(kinds).zip(shares) {
        let d = unit_direction(m.rows(), m.cols(), kind, rng)?;
        let mut w = m.clone();
        w.add_scaled(total * share / sum, &d)?;
        weights.push(w);
        dirs.push(d);
    }
    Ok((weights, dirs))
}

fn unit_direction(rows: usize, cols: usize, kind: LayerNormKind, rng: &mut Rng) -> Result<Matrix> {
    let mut d = Matrix::from_fn(rows, cols, |_, _| rng.normal());
    let norm = layer_norm(&d, kind)?;
    d.scale(1.0 / norm);
    Ok(d)
}

fn in_ball(dim: usize, chi: f64, rng: &mut Rng) -> Vec<f64> {
    let radius = chi * rng.uniform();
    rng.unit_vector(dim)
        .into_iter()
        .map(|v| v * radius)
        .collect()
}

/// Samples pairs `(x, θ)`, `(x̃, θ̃)` from the constraint set around the
/// decoder's initialization and returns the largest ratio of the observed
/// output change to `(χ+1)·exp(β+Lν)·(‖x − x̃‖ + Σ‖W^ℓ − W̃^ℓ‖_ℓ)`.
///
/// Half the trials compare independent draws; the other half perturb a single
/// layer (or only the input) slightly, probing the local constant.
pub fn lipschitz_probe(
    params: &ModelParams,
    trials: usize,
    chi: f64,
    beta: f64,
    seed: u64,
) -> Result<LipschitzReport> {
    if trials == 0 || !(chi > 0.0) || !(beta >= 0.0) {
        return Err(Error::invalid("need trials ≥ 1, χ > 0 and β ≥ 0"));
    }
    let spec = &params.spec.decoder;
    let init = params.init_snapshot();
    let depth = spec.layers.len();
    let kinds: Vec<LayerNormKind> = (0..depth)
        .map(|l| layer_norm_kind(spec, l))
        .collect::<Result<_>>()?;
    let mut nu: f64 = 0.0;
    for (m, &kind) in init.iter().zip(&kinds) {
        nu = nu.max(layer_norm(m, kind)? - 1.0);
    }
    let constant = (chi + 1.0) * (beta + depth as f64 * nu).exp();
    let mut rng = Rng::new(seed);
    let mut max_ratio: f64 = 0.0;
    for t in 0..trials {
        let x = in_ball(spec.r, chi, &mut rng);
        let (w, _) = draw_weights(init, &kinds, beta, &mut rng)?;
        let (x2, w2) = if t % 2 == 0 {
            (
                in_ball(spec.r, chi, &mut rng),
                draw_weights(init, &kinds, beta, &mut rng)?.0,
            )
        } else {
            let eps = 1e-3 * rng.uniform();
            let layer = rng.index(depth + 1);
            let mut w2 = w.clone();
            let mut x2 = x.clone();
            if layer == depth {
                let step = rng.unit_vector(spec.r);
                for (v, s) in x2.iter_mut().zip(step) {
                    *v += eps * s;
                }
                let norm = norm2(&x2);
                if norm > chi {
                    x2.iter_mut().for_each(|v| *v *= chi / norm);
                }
            } else {
                // shrink toward M so the budget still holds after the nudge
                let d = unit_direction(w[layer].rows(), w[layer].cols(), kinds[layer], &mut rng)?;
                let drift = w[layer].sub(&init[layer])?;
                w2[layer] = init[layer].clone();
                w2[layer].add_scaled(1.0 - eps, &drift)?;
                let removed = eps * layer_norm(&drift, kinds[layer])?;
                w2[layer].add_scaled(removed, &d)?;
            }
            (x2, w2)
        };
        let g1 = decode_with(spec, &w, &x)?;
        let g2 = decode_with(spec, &w2, &x2)?;
        let num = g1
            .iter()
            .zip(&g2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dx = norm2(&x.iter().zip(&x2).map(|(a, b)| a - b).collect::<Vec<_>>());
        let mut dw = 0.0;
        for ((a, b), &kind) in w.iter().zip(&w2).zip(&kinds) {
            dw += layer_norm(&a.sub(b)?, kind)?;
        }
        let bound = constant * (dx + dw);
        let ratio = if num == 0.0 { 0.0 } else { num / bound };
        max_ratio = max_ratio.max(ratio);
    }
    Ok(LipschitzReport {
        trials,
        max_ratio,
        chi,
        beta,
        nu,
    })
}
