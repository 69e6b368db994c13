//! Architecture-specific layer norms and distances from initialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecoderSpec, LayerKind, ModelParams};
use crate::numerics::{spectral_norm, Matrix, SPECTRAL_TOLERANCE};

/// Which norm measures a decoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerNormKind {
    /// Dense layer before the expansion: spectral norm.
    InteriorDense,
    /// The expanding layer: max spectral norm over its `items` slices.
    BoundaryL0 { items: usize },
    /// 1×1 convolution: spectral norm of the shared kernel.
    InteriorConv,
    /// Output layer: max Euclidean row norm (`‖Wᵀ‖_{2,∞}`).
    Last,
}

/// Norm kind of decoder layer `idx` (0-based); the last layer always uses
/// [`LayerNormKind::Last`].
pub fn layer_norm_kind(decoder: &DecoderSpec, idx: usize) -> Result<LayerNormKind> {
    let depth = decoder.layers.len();
    if idx >= depth {
        return Err(Error::invalid(format!(
            "layer {idx} outside a {depth}-layer decoder"
        )));
    }
    if idx + 1 == depth {
        return Ok(LayerNormKind::Last);
    }
    Ok(match decoder.layers[idx].kind {
        LayerKind::Dense => LayerNormKind::InteriorDense,
        LayerKind::Expand { items } => LayerNormKind::BoundaryL0 { items },
        LayerKind::Conv1x1 => LayerNormKind::InteriorConv,
        LayerKind::Collapse { .. } => {
            return Err(Error::invalid(
                "a collapsing layer cannot appear in a decoder",
            ))
        }
    })
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn layer_norm(w: &Matrix, kind: LayerNormKind) -> Result<f64> {
    match kind {
        LayerNormKind::InteriorDense | LayerNormKind::InteriorConv => {
            Ok(spectral_norm(w, SPECTRAL_TOLERANCE))
        }
        LayerNormKind::BoundaryL0 { items } => {
            if items == 0 || w.rows() % items != 0 {
                return Err(Error::shape(
                    "layer_norm",
                    format!("{} rows cannot be split into {items} slices", w.rows()),
                ));
            }
            let out = w.rows() / items;
            let mut best: f64 = 0.0;
            for j in 0..items {
                let slice = w.row_block(j * out, (j + 1) * out);
                best = best.max(spectral_norm(&slice, SPECTRAL_TOLERANCE));
            }
            Ok(best)
        }
        LayerNormKind::Last => Ok((0..w.rows())
            .map(|i| row_norm(w.row(i)))
            .fold(0.0, f64::max)),
    }
}

/// `‖Aᵀ‖_{2,1}`: sum of Euclidean row norms.
pub fn norm_2_1_transposed(a: &Matrix) -> f64 {
    (0..a.rows()).map(|i| row_norm(a.row(i))).sum()
}

/// Post-hoc measurements of the decoder against its initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitDistance {
    pub kinds: Vec<LayerNormKind>,
    /// `‖W^ℓ − M^ℓ‖_ℓ`.
    pub layer_distances: Vec<f64>,
    /// Empirical `β = Σ_ℓ ‖W^ℓ − M^ℓ‖_ℓ`.
    pub beta: f64,
    /// `‖M^ℓ‖_ℓ`.
    pub init_norms: Vec<f64>,
    /// Empirical `ν = max(0, max_ℓ ‖M^ℓ‖_ℓ − 1)`.
    pub nu: f64,
    /// Empirical `a_ℓ`: `‖(W^ℓ − M^ℓ)ᵀ‖_{2,1}`, Frobenius at the last layer.
    pub a: Vec<f64>,
    /// Empirical `s_ℓ = ‖W^ℓ‖_ℓ`.
    pub s: Vec<f64>,
}

pub fn distance_to_init(params: &ModelParams) -> Result<InitDistance> {
    let init = params.init_snapshot();
    let decoder = &params.spec.decoder;
    if init.len() != params.decoder.len() {
        return Err(Error::invalid(
            "parameters carry no initialization snapshot",
        ));
    }
    let mut out = InitDistance {
        kinds: Vec::new(),
        layer_distances: Vec::new(),
        beta: 0.0,
        init_norms: Vec::new(),
        nu: 0.0,
        a: Vec::new(),
        s: Vec::new(),
    };
    for (idx, (layer, m)) in params.decoder.iter().zip(init).enumerate() {
        let kind = layer_norm_kind(decoder, idx)?;
        let diff = layer.weight.sub(m)?;
        let dist = layer_norm(&diff, kind)?;
        let init_norm = layer_norm(m, kind)?;
        out.kinds.push(kind);
        out.layer_distances.push(dist);
        out.beta += dist;
        out.nu = out.nu.max(init_norm - 1.0);
        out.init_norms.push(init_norm);
        out.a.push(if kind == LayerNormKind::Last {
            diff.frobenius_norm()
        } else {
            norm_2_1_transposed(&diff)
        });
        out.s.push(layer_norm(&layer.weight, kind)?);
    }
    Ok(out)
}
