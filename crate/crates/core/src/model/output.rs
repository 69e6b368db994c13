use serde::{Deserialize, Serialize};

use crate::dataset::RatingScale;
use crate::error::{Error, Result};
use crate::numerics::{stable_softmax, Matrix};

/// Per-item outputs for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    /// Raw scores `g`, `n × (k+1)`; absent for checkpoint-averaged output.
    pub scores: Option<Matrix>,
    /// `G = softmax(g)` per item, `n × (k+1)`.
    pub probabilities: Matrix,
    /// `G̃`: rating distribution given an interaction, `n × k`.
    pub conditional: Matrix,
    /// `F = Σ_κ u_κ G̃_κ`.
    pub prediction: Vec<f64>,
    /// `1 − G₀`.
    pub interaction: Vec<f64>,
    /// Bottleneck `φ(U_i)`; absent for checkpoint-averaged output.
    pub embedding: Option<Vec<f64>>,
}

impl ForwardOutput {
    pub fn from_probabilities(probabilities: Matrix, scale: &RatingScale) -> Result<Self> {
        let k = scale.k();
        if probabilities.cols() != k + 1 {
            return Err(Error::shape(
                "ForwardOutput",
                format!("{} probability channels for k = {k}", probabilities.cols()),
            ));
        }
        let n = probabilities.rows();
        let mut conditional = Matrix::zeros(n, k);
        let mut prediction = Vec::with_capacity(n);
        let mut interaction = Vec::with_capacity(n);
        for j in 0..n {
            let g = probabilities.row(j);
            let c = conditional_from_probabilities(g);
            prediction.push(expected_rating(&c, scale));
            conditional.row_mut(j).copy_from_slice(&c);
            interaction.push(1.0 - g[0]);
        }
        Ok(ForwardOutput {
            scores: None,
            probabilities,
            conditional,
            prediction,
            interaction,
            embedding: None,
        })
    }
}

/// `G̃_κ = G_κ / Σ_{κ'≥1} G_κ'`; uniform if every rating channel underflowed.
pub fn conditional_from_probabilities(g: &[f64]) -> Vec<f64> {
    let tail = &g[1..];
    let total: f64 = tail.iter().sum();
    if total > 0.0 {
        tail.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / tail.len() as f64; tail.len()]
    }
}

/// `Σ u_κ G̃_κ`, clamped to the scale's range against rounding.
pub fn expected_rating(conditional: &[f64], scale: &RatingScale) -> f64 {
    let f: f64 = conditional
        .iter()
        .zip(scale.values())
        .map(|(c, u)| c * u)
        .sum();
    f.clamp(scale.min(), scale.max())
}

/// Checks that conditioning `softmax(g₀..g_k)` on an interaction equals
/// `softmax(g₁..g_k)` to within 1e-12.
pub fn conditional_identity_check(g: &[f64]) -> bool {
    if g.len() < 2 {
        return false;
    }
    let (Ok(full), Ok(direct)) = (stable_softmax(g), stable_softmax(&g[1..])) else {
        return false;
    };
    let via_full = conditional_from_probabilities(&full);
    via_full
        .iter()
        .zip(&direct)
        .all(|(a, b)| (a - b).abs() <= 1e-12)
}

/// `∂F/∂g_κ` for `κ = 1..k`, i.e. `G̃_κ (u_κ − F)`.
pub fn prediction_jacobian(g: &[f64], scale: &RatingScale) -> Result<Vec<f64>> {
    if g.len() != scale.k() + 1 {
        return Err(Error::shape(
            "prediction_jacobian",
            format!("{} scores for k = {}", g.len(), scale.k()),
        ));
    }
    let c = stable_softmax(&g[1..])?;
    let f: f64 = c.iter().zip(scale.values()).map(|(c, u)| c * u).sum();
    Ok(c.iter()
        .zip(scale.values())
        .map(|(c, u)| c * (u - f))
        .collect())
}
