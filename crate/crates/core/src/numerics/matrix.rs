use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Work (multiply-adds) below which products stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} entries, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Reinterprets the row-major buffer with a new shape of equal size.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(Error::shape(
                "Matrix::reshape",
                format!("{}x{} cannot become {rows}x{cols}", self.rows, self.cols),
            ));
        }
        Ok(Matrix {
            rows,
            cols,
            data: self.data,
        })
    }

    /// Copies rows `start..end` into a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "Matrix::add_scaled",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "Matrix::sub",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Matrix-vector product `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "Matrix::mul_vec",
                format!(
                    "{}x{} times vector of length {}",
                    self.rows,
                    self.cols,
                    v.len()
                ),
            ));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ * v`.
    pub fn mul_vec_transposed(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::shape(
                "Matrix::mul_vec_transposed",
                format!(
                    "({}x{})ᵀ times vector of length {}",
                    self.rows,
                    self.cols,
                    v.len()
                ),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi, self.row(i), &mut out);
        }
        Ok(out)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize; the order is fixed, so
    // results are reproducible.
    let chunks = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Output rows computed together so that the streamed operand is read once
/// per block rather than once per row.
const ROW_BLOCK: usize = 8;

fn for_row_blocks(
    out: &mut [f64],
    row_len: usize,
    work: usize,
    kernel: impl Fn(usize, &mut [f64]) + Sync,
) {
    if row_len == 0 {
        return;
    }
    let chunk = ROW_BLOCK * row_len;
    if work >= PAR_THRESHOLD {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(b, o)| kernel(b * ROW_BLOCK, o));
    } else {
        out.chunks_mut(chunk)
            .enumerate()
            .for_each(|(b, o)| kernel(b * ROW_BLOCK, o));
    }
}

/// `a (m×k) · b (k×n)` on raw row-major buffers. Every output element sums
/// over `k` in ascending order.
pub fn gemm_nn(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for_row_blocks(&mut out, n, m * k * n, |r0, block| {
        let rows = block.len() / n;
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            for r in 0..rows {
                let aik = a[(r0 + r) * k + kk];
                if aik != 0.0 {
                    axpy(aik, b_row, &mut block[r * n..(r + 1) * n]);
                }
            }
        }
    });
    out
}

/// `a (m×k) · b (n×k)ᵀ`. Each output element equals `dot(a_i, b_j)` bit for bit.
pub fn gemm_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    for_row_blocks(&mut out, n, m * k * n, |r0, block| {
        let rows = block.len() / n;
        if rows == ROW_BLOCK {
            let a_rows: [&[f64]; ROW_BLOCK] =
                std::array::from_fn(|r| &a[(r0 + r) * k..(r0 + r + 1) * k]);
            for j in 0..n {
                let d = dot_block(&a_rows, &b[j * k..(j + 1) * k]);
                for r in 0..ROW_BLOCK {
                    block[r * n + j] = d[r];
                }
            }
        } else {
            for r in 0..rows {
                let ai = &a[(r0 + r) * k..(r0 + r + 1) * k];
                for j in 0..n {
                    block[r * n + j] = dot(ai, &b[j * k..(j + 1) * k]);
                }
            }
        }
    });
    out
}

/// `a (m×k)ᵀ · b (m×n)`, giving `k×n`. Each output element sums over the
/// rows of `a` in ascending order.
pub fn gemm_tn(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![0.0; k * n];
    for_row_blocks(&mut out, n, m * k * n, |r0, block| {
        let rows = block.len() / n;
        for i in 0..m {
            let b_row = &b[i * n..(i + 1) * n];
            for r in 0..rows {
                let aik = a[i * k + r0 + r];
                if aik != 0.0 {
                    axpy(aik, b_row, &mut block[r * n..(r + 1) * n]);
                }
            }
        }
    });
    out
}

/// Same lane structure as [`dot`] for several left operands at once.
#[inline]
fn dot_block(a: &[&[f64]; ROW_BLOCK], b: &[f64]) -> [f64; ROW_BLOCK] {
    let len = b.len();
    let chunks = len / 4;
    let mut acc = [[0.0f64; 4]; ROW_BLOCK];
    for c in 0..chunks {
        let i = c * 4;
        let bv = [b[i], b[i + 1], b[i + 2], b[i + 3]];
        for r in 0..ROW_BLOCK {
            let ar = &a[r][i..i + 4];
            acc[r][0] += ar[0] * bv[0];
            acc[r][1] += ar[1] * bv[1];
            acc[r][2] += ar[2] * bv[2];
            acc[r][3] += ar[3] * bv[3];
        }
    }
    let mut out = [0.0; ROW_BLOCK];
    for r in 0..ROW_BLOCK {
        let mut s = (acc[r][0] + acc[r][1]) + (acc[r][2] + acc[r][3]);
        for i in chunks * 4..len {
            s += a[r][i] * b[i];
        }
        out[r] = s;
    }
    out
}

/// Standard product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let data = gemm_nn(&a.data, a.rows, a.cols, &b.data, b.cols);
    Ok(Matrix {
        rows: a.rows,
        cols: b.cols,
        data,
    })
}

/// `a * bᵀ`, reading both operands row-wise.
pub fn matmul_transb(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_transb",
            format!("{}x{} times ({}x{})ᵀ", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let data = gemm_nt(&a.data, a.rows, a.cols, &b.data, b.rows);
    Ok(Matrix {
        rows: a.rows,
        cols: b.rows,
        data,
    })
}

/// `aᵀ * b`.
pub fn matmul_transa(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "matmul_transa",
            format!("({}x{})ᵀ times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let data = gemm_tn(&a.data, a.rows, a.cols, &b.data, b.cols);
    Ok(Matrix {
        rows: a.cols,
        cols: b.cols,
        data,
    })
}
