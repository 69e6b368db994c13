use super::{ForwardOutput, LayerKind, LayerParams, LayerSpec, ModelParams};
use crate::dataset::{ObservedDataset, RatingScale, UserSlice};
use crate::error::{Error, Result};
use crate::numerics::{gemm_nn, gemm_nt, gemm_tn, norm2, softmax_in_place, Matrix};

const BATCH: usize = 64;

/// Post-activation outputs of every layer (encoder first, then decoder).
#[derive(Debug, Clone)]
pub struct Trace {
    outputs: Vec<Matrix>,
    encoder_layers: usize,
}

impl Trace {
    /// Bottleneck embeddings, `B × r`.
    pub fn embeddings(&self) -> &Matrix {
        &self.outputs[self.encoder_layers - 1]
    }

    /// Raw scores, `B × n(k+1)` with item-major rows.
    pub fn scores(&self) -> &Matrix {
        self.outputs.last().expect("non-empty network")
    }
}

/// Gradients in the order of [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Matrix>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().map(Matrix::max_abs).fold(0.0, f64::max)
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.as_slice().iter().map(|x| x * x).sum::<f64>())
            .sum()
    }
}

/// Number of rows each sample occupies when the batch is viewed as
/// `(B·s) × in` for this layer.
fn spatial(spec: &LayerSpec, x: &Matrix) -> Result<usize> {
    let (_, cols) = spec.weight_shape();
    if x.cols() % cols != 0 {
        return Err(Error::shape(
            "layer",
            format!("input width {} is not a multiple of {cols}", x.cols()),
        ));
    }
    let s = x.cols() / cols;
    if s != 1 && spec.kind != LayerKind::Conv1x1 {
        return Err(Error::shape(
            "layer",
            format!("{:?} expects width {cols}, got {}", spec.kind, x.cols()),
        ));
    }
    Ok(s)
}

fn apply(spec: &LayerSpec, p: &LayerParams, x: &Matrix) -> Result<Matrix> {
    let s = spatial(spec, x)?;
    let (rows, cols) = spec.weight_shape();
    let batch_rows = x.rows() * s;
    let mut y = gemm_nt(x.as_slice(), batch_rows, cols, p.weight.as_slice(), rows);
    if let Some(b) = &p.bias {
        for row in y.chunks_mut(rows) {
            for (v, bi) in row.iter_mut().zip(b.as_slice()) {
                *v += bi;
            }
        }
    }
    if spec.relu {
        for v in &mut y {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    Matrix::from_vec(x.rows(), s * rows, y)
}

fn check_input(params: &ModelParams, input: &Matrix) -> Result<()> {
    let width = params.spec.n() * (params.spec.k() + 1);
    if input.cols() != width {
        return Err(Error::shape(
            "forward",
            format!(
                "input width {} but the model expects n(k+1) = {width}",
                input.cols()
            ),
        ));
    }
    Ok(())
}

pub fn forward_batch(params: &ModelParams, input: &Matrix) -> Result<Trace> {
    check_input(params, input)?;
    let specs = params
        .spec
        .encoder
        .layers
        .iter()
        .chain(&params.spec.decoder.layers);
    let layers = params.encoder.iter().chain(&params.decoder);
    let mut outputs: Vec<Matrix> = Vec::with_capacity(params.encoder.len() + params.decoder.len());
    for (spec, p) in specs.zip(layers) {
        let y = apply(spec, p, outputs.last().unwrap_or(input))?;
        outputs.push(y);
    }
    Ok(Trace {
        outputs,
        encoder_layers: params.encoder.len(),
    })
}

/// Bottleneck embeddings `φ(U)` for a batch of one-hot inputs.
pub fn encode_batch(params: &ModelParams, input: &Matrix) -> Result<Matrix> {
    check_input(params, input)?;
    let mut x = input.clone();
    for (spec, p) in params.spec.encoder.layers.iter().zip(&params.encoder) {
        x = apply(spec, p, &x)?;
    }
    Ok(x)
}

/// Scores `g(z)` for a batch of bottleneck vectors.
pub fn decode_batch(params: &ModelParams, embeddings: &Matrix) -> Result<Matrix> {
    let mut x = embeddings.clone();
    for (spec, p) in params.spec.decoder.layers.iter().zip(&params.decoder) {
        x = apply(spec, p, &x)?;
    }
    Ok(x)
}

/// Backpropagates `∂loss/∂scores` through the network.
pub fn backward_batch(
    params: &ModelParams,
    input: &Matrix,
    trace: &Trace,
    dscores: &Matrix,
) -> Result<Gradients> {
    if dscores.shape() != trace.scores().shape() {
        return Err(Error::shape(
            "backward",
            format!(
                "score gradient {:?} vs scores {:?}",
                dscores.shape(),
                trace.scores().shape()
            ),
        ));
    }
    let specs: Vec<&LayerSpec> = params
        .spec
        .encoder
        .layers
        .iter()
        .chain(&params.spec.decoder.layers)
        .collect();
    let layers: Vec<&LayerParams> = params.encoder.iter().chain(&params.decoder).collect();
    let mut per_layer: Vec<(Matrix, Option<Matrix>)> = Vec::with_capacity(layers.len());
    let mut dy = dscores.clone();
    for idx in (0..layers.len()).rev() {
        let spec = specs[idx];
        let x = if idx == 0 {
            input
        } else {
            &trace.outputs[idx - 1]
        };
        let y = &trace.outputs[idx];
        if spec.relu {
            for (d, &v) in dy.as_mut_slice().iter_mut().zip(y.as_slice()) {
                if v <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let s = spatial(spec, x)?;
        let (rows, cols) = spec.weight_shape();
        let batch_rows = x.rows() * s;
        let dw = gemm_tn(dy.as_slice(), batch_rows, rows, x.as_slice(), cols);
        let dw = Matrix::from_vec(rows, cols, dw)?;
        let db = layers[idx].bias.as_ref().map(|_| {
            let mut acc = vec![0.0; rows];
            for row in dy.as_slice().chunks(rows) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Matrix::from_vec(1, rows, acc).expect("bias shape")
        });
        if idx > 0 {
            let dx = gemm_nn(
                dy.as_slice(),
                batch_rows,
                rows,
                layers[idx].weight.as_slice(),
                cols,
            );
            dy = Matrix::from_vec(x.rows(), x.cols(), dx)?;
        }
        per_layer.push((dw, db));
    }
    per_layer.reverse();
    let tensors = per_layer
        .into_iter()
        .flat_map(|(w, b)| std::iter::once(w).chain(b))
        .collect();
    Ok(Gradients { tensors })
}

/// Dense one-hot inputs for a batch of sparse `(item, rating index)` rows.
pub fn one_hot_input(rows: &[&[(usize, usize)]], n: usize, k: usize) -> Matrix {
    let width = n * (k + 1);
    let mut x = Matrix::zeros(rows.len(), width);
    for (b, entries) in rows.iter().enumerate() {
        let row = x.row_mut(b);
        for j in 0..n {
            row[j * (k + 1)] = 1.0;
        }
        for &(j, kappa) in entries.iter() {
            row[j * (k + 1)] = 0.0;
            row[j * (k + 1) + kappa] = 1.0;
        }
    }
    x
}

/// Full forward pass for one user: scores, probabilities, conditional
/// rating distribution, predicted rating and interaction probability.
pub fn forward(
    params: &ModelParams,
    slice: &UserSlice,
    scale: &RatingScale,
) -> Result<ForwardOutput> {
    if slice.n != params.spec.n() || slice.k != params.spec.k() || scale.k() != slice.k {
        return Err(Error::shape(
            "forward",
            format!(
                "slice n={}, k={} (scale k={}) vs model n={}, k={}",
                slice.n,
                slice.k,
                scale.k(),
                params.spec.n(),
                params.spec.k()
            ),
        ));
    }
    let input = one_hot_input(&[&slice.entries], slice.n, slice.k);
    let trace = forward_batch(params, &input)?;
    let k1 = slice.k + 1;
    let scores = Matrix::from_vec(slice.n, k1, trace.scores().as_slice().to_vec())?;
    let mut probs = scores.clone();
    for j in 0..slice.n {
        softmax_in_place(probs.row_mut(j));
    }
    let mut out = ForwardOutput::from_probabilities(probs, scale)?;
    out.scores = Some(scores);
    out.embedding = Some(trace.embeddings().row(0).to_vec());
    Ok(out)
}

/// Empirical `χ`: the largest bottleneck norm over all users' training slices.
pub fn embedding_norm_max(params: &ModelParams, train: &ObservedDataset) -> Result<f64> {
    let rows = train.by_user();
    let mut best: f64 = 0.0;
    for chunk in rows.chunks(BATCH) {
        let refs: Vec<&[(usize, usize)]> = chunk.iter().map(Vec::as_slice).collect();
        let z = encode_batch(params, &one_hot_input(&refs, train.n, train.k()))?;
        for b in 0..z.rows() {
            best = best.max(norm2(z.row(b)));
        }
    }
    Ok(best)
}
