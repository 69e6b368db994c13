//! Self-describing binary checkpoints.
//!
//! Layout: the 8-byte magic `C4RCKPT1`, a little-endian `u64` header
//! length, a JSON header (spec, seed, rating scale, tensor manifest), then
//! every tensor as raw little-endian `f64` in manifest order. Floats are
//! stored bit for bit, so a write→read round trip is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerParams, ModelParams, ModelSpec};
use crate::dataset::RatingScale;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &[u8; 8] = b"C4RCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub scale: RatingScale,
    /// Epochs completed when the snapshot was taken.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    seed: u64,
    scale: Vec<f64>,
    epoch: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

fn layer_tensors<'a>(prefix: &str, layers: &'a [LayerParams]) -> Vec<(String, &'a Matrix)> {
    let mut out = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        out.push((format!("{prefix}.{i}.weight"), &l.weight));
        if let Some(b) = &l.bias {
            out.push((format!("{prefix}.{i}.bias"), b));
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let p = &ckpt.params;
    let mut tensors = layer_tensors("encoder", &p.encoder);
    tensors.extend(layer_tensors("decoder", &p.decoder));
    for (i, m) in p.init_snapshot().iter().enumerate() {
        tensors.push((format!("init.{i}"), m));
    }
    let header = Header {
        spec: p.spec.clone(),
        seed: p.seed,
        scale: ckpt.scale.values().to_vec(),
        epoch: ckpt.epoch,
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let payload: usize = tensors.iter().map(|(_, m)| m.len() * 8).sum();
    let mut bytes = Vec::with_capacity(16 + json.len() + payload);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, m) in &tensors {
        for v in m.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic header"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| bad(&format!("bad header: {e}")))?;
    let mut offset = body;
    let mut read = |entry: &TensorEntry| -> Result<Matrix> {
        let len = entry.rows * entry.cols;
        let end = offset + len * 8;
        if end > bytes.len() {
            return Err(bad(&format!("tensor {} is truncated", entry.name)));
        }
        let data = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset = end;
        Matrix::from_vec(entry.rows, entry.cols, data)
    };
    let mut tensors = header.tensors.iter();
    let mut layers = |count: usize| -> Result<Vec<LayerParams>> {
        (0..count)
            .map(|_| {
                let w = tensors.next().ok_or_else(|| bad("missing weight tensor"))?;
                let weight = read(w)?;
                let bias = if header.spec.bias {
                    let b = tensors.next().ok_or_else(|| bad("missing bias tensor"))?;
                    Some(read(b)?)
                } else {
                    None
                };
                Ok(LayerParams { weight, bias })
            })
            .collect()
    };
    let encoder = layers(header.spec.encoder.layers.len())?;
    let decoder = layers(header.spec.decoder.layers.len())?;
    let init = (0..header.spec.decoder.layers.len())
        .map(|_| {
            let t = tensors.next().ok_or_else(|| bad("missing init tensor"))?;
            read(t)
        })
        .collect::<Result<Vec<_>>>()?;
    if tensors.next().is_some() || offset != bytes.len() {
        return Err(bad("trailing data"));
    }
    let params = ModelParams::from_parts(header.spec, encoder, decoder, init, header.seed)?;
    Ok(Checkpoint {
        params,
        scale: RatingScale::new(header.scale)?,
        epoch: header.epoch,
    })
}
