//! Encoder/decoder specifications, parameters and the forward pass.
//!
//! Every layer is stored as a single weight matrix and applied as
//! `X · Wᵀ` after viewing the batch as `(B·s) × in`, where `s` is the
//! number of items for a 1×1 convolution and 1 otherwise:
//!
//! | kind       | weight shape      | maps                         |
//! |------------|-------------------|------------------------------|
//! | `Dense`    | `out × in`        | `ℝ^in → ℝ^out`               |
//! | `Conv1x1`  | `out × in`        | `ℝ^{n×in} → ℝ^{n×out}`, tied |
//! | `Expand`   | `(n·out) × in`    | `ℝ^in → ℝ^{n×out}`           |
//! | `Collapse` | `out × (n·in)`    | `ℝ^{n×in} → ℝ^out` (flatten) |
//!
//! Rows `j·out..(j+1)·out` of an `Expand` weight form the slice for item `j`.

mod checkpoint;
mod network;
mod output;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use network::{
    backward_batch, decode_batch, embedding_norm_max, encode_batch, forward, forward_batch,
    one_hot_input, Gradients, Trace,
};
pub use output::{
    conditional_from_probabilities, conditional_identity_check, expected_rating,
    prediction_jacobian, ForwardOutput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv1x1,
    /// Fully connected layer whose output is laid out as `items × out`.
    Expand {
        items: usize,
    },
    /// Fully connected layer reading a flattened `items × in` input.
    Collapse {
        items: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input: usize,
    pub output: usize,
    pub relu: bool,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Dense | LayerKind::Conv1x1 => (self.output, self.input),
            LayerKind::Expand { items } => (items * self.output, self.input),
            LayerKind::Collapse { items } => (self.output, items * self.input),
        }
    }

    pub fn param_count(&self, bias: bool) -> usize {
        let (rows, cols) = self.weight_shape();
        rows * cols + if bias { rows } else { 0 }
    }
}

/// Activation layout between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Flat(usize),
    Spatial(usize),
}

fn chain(layers: &[LayerSpec], n: usize, start: Layout) -> Result<Layout> {
    let mut state = start;
    for (idx, l) in layers.iter().enumerate() {
        if l.input == 0 || l.output == 0 {
            return Err(Error::invalid(format!(
                "layer {idx} has a zero width: {l:?}"
            )));
        }
        state = match (l.kind, state) {
            (LayerKind::Dense, Layout::Flat(w)) if w == l.input => Layout::Flat(l.output),
            (LayerKind::Conv1x1, Layout::Spatial(w)) if w == l.input => Layout::Spatial(l.output),
            (LayerKind::Expand { items }, Layout::Flat(w)) if w == l.input && items == n => {
                Layout::Spatial(l.output)
            }
            (LayerKind::Collapse { items }, Layout::Spatial(w)) if w == l.input && items == n => {
                Layout::Flat(l.output)
            }
            _ => {
                return Err(Error::invalid(format!(
                    "layer {idx} ({l:?}) cannot follow activations of shape {state:?} with n = {n}"
                )))
            }
        };
    }
    Ok(state)
}

/// Maps a user slice `ℝ^{n×(k+1)}` to the bottleneck `ℝ^r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub layers: Vec<LayerSpec>,
}

impl EncoderSpec {
    pub fn new(n: usize, k: usize, r: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let end = chain(&layers, n, Layout::Spatial(k + 1))?;
        if end != Layout::Flat(r) {
            return Err(Error::invalid(format!(
                "encoder must end in a flat width-{r} bottleneck, ends in {end:?}"
            )));
        }
        Ok(EncoderSpec { n, k, r, layers })
    }

    /// One shared 1×1 convolution `k+1 → width` (ReLU), flattened into a
    /// linear dense layer `n·width → r`.
    ///
    /// The bottleneck is left linear: with `n·width` inputs per unit, the
    /// first optimizer steps move every pre-activation by tens, and a ReLU
    /// there dies for all users at once.
    pub fn standard(n: usize, k: usize, r: usize, width: usize) -> Result<Self> {
        Self::new(
            n,
            k,
            r,
            vec![
                LayerSpec {
                    kind: LayerKind::Conv1x1,
                    input: k + 1,
                    output: width,
                    relu: true,
                },
                LayerSpec {
                    kind: LayerKind::Collapse { items: n },
                    input: width,
                    output: r,
                    relu: false,
                },
            ],
        )
    }

    /// `D₁`.
    pub fn param_count(&self, bias: bool) -> usize {
        self.layers.iter().map(|l| l.param_count(bias)).sum()
    }
}

/// Maps the bottleneck `ℝ^r` to scores `ℝ^{n×(k+1)}`: `l0 − 1` dense
/// layers, the expanding layer `l0`, then 1×1 convolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub l0: usize,
    pub layers: Vec<LayerSpec>,
}

impl DecoderSpec {
    pub fn new(n: usize, k: usize, r: usize, l0: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if l0 == 0 || l0 > layers.len() {
            return Err(Error::invalid(format!(
                "L0 = {l0} must lie in 1..={}",
                layers.len()
            )));
        }
        for (idx, l) in layers.iter().enumerate() {
            let ok = match idx + 1 {
                p if p < l0 => l.kind == LayerKind::Dense,
                p if p == l0 => matches!(l.kind, LayerKind::Expand { .. }),
                _ => l.kind == LayerKind::Conv1x1,
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "decoder layer {} is {:?}; expected dense layers before L0 = {l0}, \
                     the expanding layer at L0 and 1x1 convolutions after it",
                    idx + 1,
                    l.kind
                )));
            }
        }
        let end = chain(&layers, n, Layout::Flat(r))?;
        if end != Layout::Spatial(k + 1) {
            return Err(Error::invalid(format!(
                "decoder must end in n x {} scores, ends in {end:?}",
                k + 1
            )));
        }
        if layers.last().is_some_and(|l| l.relu) {
            return Err(Error::invalid(
                "the final decoder layer emits raw scores (no ReLU)",
            ));
        }
        Ok(DecoderSpec {
            n,
            k,
            r,
            l0,
            layers,
        })
    }

    /// `L0 = 1`: expand `r → n×width`, then `depth − 1` convolutions ending
    /// at `k+1` channels. With `depth = 1` the expansion emits scores directly.
    pub fn standard(n: usize, k: usize, r: usize, depth: usize, width: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("decoder depth must be at least 1"));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 1..=depth {
            let input = if l == 1 { r } else { width };
            let output = if l == depth { k + 1 } else { width };
            let kind = if l == 1 {
                LayerKind::Expand { items: n }
            } else {
                LayerKind::Conv1x1
            };
            layers.push(LayerSpec {
                kind,
                input,
                output,
                relu: l < depth,
            });
        }
        Self::new(n, k, r, 1, layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `D₂ = Σ_{ℓ≠L0} K_ℓ K_{ℓ−1} + K_{L0−1} n K_{L0}`, plus one bias per
    /// output unit when biases are enabled.
    pub fn param_count(&self, bias: bool) -> usize {
        self.layers.iter().map(|l| l.param_count(bias)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub decoder: DecoderSpec,
    pub bias: bool,
}

impl ModelSpec {
    pub fn new(encoder: EncoderSpec, decoder: DecoderSpec, bias: bool) -> Result<Self> {
        if (encoder.n, encoder.k, encoder.r) != (decoder.n, decoder.k, decoder.r) {
            return Err(Error::invalid(format!(
                "encoder (n={}, k={}, r={}) and decoder (n={}, k={}, r={}) disagree",
                encoder.n, encoder.k, encoder.r, decoder.n, decoder.k, decoder.r
            )));
        }
        Ok(ModelSpec {
            encoder,
            decoder,
            bias,
        })
    }

    pub fn standard(arch: &Architecture) -> Result<Self> {
        Self::new(
            EncoderSpec::standard(arch.n, arch.k, arch.r, arch.width)?,
            DecoderSpec::standard(arch.n, arch.k, arch.r, arch.depth, arch.width)?,
            arch.bias,
        )
    }

    pub fn n(&self) -> usize {
        self.decoder.n
    }

    pub fn k(&self) -> usize {
        self.decoder.k
    }

    pub fn r(&self) -> usize {
        self.decoder.r
    }

    pub fn d1(&self) -> usize {
        self.encoder.param_count(self.bias)
    }

    pub fn d2(&self) -> usize {
        self.decoder.param_count(self.bias)
    }

    fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.encoder.layers.iter().chain(&self.decoder.layers)
    }
}

/// The knobs of the standard architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n: usize,
    pub k: usize,
    /// Bottleneck dimension.
    pub r: usize,
    /// Decoder depth `L`.
    pub depth: usize,
    /// Channel width `K` of every hidden layer.
    pub width: usize,
    pub bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Matrix,
    /// `1 × rows(weight)` when biases are enabled.
    pub bias: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub encoder: Vec<LayerParams>,
    pub decoder: Vec<LayerParams>,
    /// Decoder weights at initialization (`M¹, …, M^L`).
    init: Vec<Matrix>,
    pub seed: u64,
}

const DECODER_STREAM: u64 = 1 << 32;

/// Glorot-uniform weights (`U(±√(6/(rows+cols)))`), zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ModelParams {
    let draw = |l: &LayerSpec, stream: u64| {
        let (rows, cols) = l.weight_shape();
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let mut rng = Rng::derive(seed, stream);
        LayerParams {
            weight: Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-limit, limit)),
            bias: spec.bias.then(|| Matrix::zeros(1, rows)),
        }
    };
    let encoder: Vec<LayerParams> = spec
        .encoder
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| draw(l, i as u64))
        .collect();
    let decoder: Vec<LayerParams> = spec
        .decoder
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| draw(l, DECODER_STREAM + i as u64))
        .collect();
    let init = decoder.iter().map(|p| p.weight.clone()).collect();
    ModelParams {
        spec: spec.clone(),
        encoder,
        decoder,
        init,
        seed,
    }
}

impl ModelParams {
    /// Assembles parameters from explicit tensors, checking every shape.
    pub fn from_parts(
        spec: ModelSpec,
        encoder: Vec<LayerParams>,
        decoder: Vec<LayerParams>,
        init: Vec<Matrix>,
        seed: u64,
    ) -> Result<Self> {
        let p = ModelParams {
            spec,
            encoder,
            decoder,
            init,
            seed,
        };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let specs: Vec<&LayerSpec> = self.spec.layers().collect();
        let params: Vec<&LayerParams> = self.encoder.iter().chain(&self.decoder).collect();
        if specs.len() != params.len() || self.init.len() != self.decoder.len() {
            return Err(Error::invalid(format!(
                "{} layer specs, {} parameter sets and {} init snapshots",
                specs.len(),
                params.len(),
                self.init.len()
            )));
        }
        for (idx, (s, p)) in specs.iter().zip(&params).enumerate() {
            let shape = s.weight_shape();
            if p.weight.shape() != shape {
                return Err(Error::shape(
                    "ModelParams",
                    format!(
                        "layer {idx} weight {:?}, expected {shape:?}",
                        p.weight.shape()
                    ),
                ));
            }
            match (&p.bias, self.spec.bias) {
                (Some(b), true) if b.shape() == (1, shape.0) => {}
                (None, false) => {}
                _ => {
                    return Err(Error::shape(
                        "ModelParams",
                        format!("layer {idx} bias does not match the bias policy"),
                    ))
                }
            }
        }
        for (idx, (m, p)) in self.init.iter().zip(&self.decoder).enumerate() {
            if m.shape() != p.weight.shape() {
                return Err(Error::shape(
                    "ModelParams",
                    format!(
                        "init snapshot {idx} {:?} vs weight {:?}",
                        m.shape(),
                        p.weight.shape()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// The frozen initialization `M` of the decoder.
    pub fn init_snapshot(&self) -> &[Matrix] {
        &self.init
    }

    /// Weights and biases in a fixed order: encoder layers, then decoder
    /// layers; within a layer, weight before bias.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|p| std::iter::once(&p.weight).chain(p.bias.as_ref()))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|p| std::iter::once(&mut p.weight).chain(p.bias.as_mut()))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}
