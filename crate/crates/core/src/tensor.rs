//! Dense row-major `f64` tensors and the handful of kernels the autodiff
//! engine needs.
//!
//! Kernels that parallelize split work by output rows only, so every output
//! element is reduced in the same order no matter how many threads run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Work (multiply-adds) below which kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 18;

/// A dense tensor. Scalars have an empty shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

/// A set of points stored one per row (`n × dim`).
pub type Batch = Tensor;

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return shape_err(format!("zero-sized dimension in shape {shape:?}"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds an `n × d` matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return shape_err("from_rows needs at least one row");
        };
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return shape_err(format!("row {i} has {} columns, expected {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return shape_err(format!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.contains(&0) {
            return shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if self.ndim() != 2 {
            return shape_err("select_rows needs a matrix");
        }
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= self.rows() {
                return Err(Error::InvalidArgument(format!(
                    "row {i} out of range for {} rows",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::matrix(idx.len(), c, data)
    }

    /// Stacks two matrices with the same column count.
    pub fn vstack(&self, other: &Tensor) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 || self.cols() != other.cols() {
            return shape_err(format!(
                "vstack of {:?} and {:?}",
                self.shape, other.shape
            ));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::matrix(self.rows() + other.rows(), self.cols(), data)
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.ndim() != 2 {
            return shape_err(format!("transpose of {:?}", self.shape));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        Ok(Self {
            shape: vec![c, r],
            data: transpose_raw(&self.data, r, c),
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 {
            return shape_err(format!(
                "matmul needs matrices, got {:?} and {:?}",
                self.shape, other.shape
            ));
        }
        let (n, k) = (self.shape[0], self.shape[1]);
        let (k2, m) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return shape_err(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, other.shape
            ));
        }
        Ok(Self {
            shape: vec![n, m],
            data: matmul_raw(&self.data, &other.data, n, k, m),
        })
    }
}

pub(crate) fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// `C[n×m] = A[n×k] · B[k×m]`, each element summed over `k` in ascending order.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    if n == 0 || m == 0 {
        return c;
    }
    if n * k * m >= PAR_THRESHOLD && n >= 8 {
        let block = 4 * (n / (4 * rayon::current_num_threads()).max(1)).clamp(1, 16);
        c.par_chunks_mut(block * m)
            .zip(a.par_chunks(block * k))
            .for_each(|(cb, ab)| matmul_block(ab, b, cb, k, m));
    } else {
        matmul_block(a, b, &mut c, k, m);
    }
    c
}

const MR: usize = 4;
const NR: usize = 16;

/// Register-tiled product of a block of rows. Every output entry is
/// accumulated from zero over `p = 0..k` in ascending order, whatever the
/// tiling, so results do not depend on how rows are split across threads.
fn matmul_block(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize) {
    let rows = c.len() / m;
    let mut panel = vec![0.0; k * NR];
    let mut j = 0;
    while j < m {
        let w = NR.min(m - j);
        // contiguous k × NR copy of columns j..j+w, zero padded
        for p in 0..k {
            let dst = &mut panel[p * NR..(p + 1) * NR];
            dst[..w].copy_from_slice(&b[p * m + j..p * m + j + w]);
            dst[w..].fill(0.0);
        }
        let mut i = 0;
        while i + MR <= rows {
            tile::<MR>(&a[i * k..(i + MR) * k], &panel, &mut c[i * m..(i + MR) * m], k, m, j, w);
            i += MR;
        }
        while i < rows {
            tile::<1>(&a[i * k..(i + 1) * k], &panel, &mut c[i * m..(i + 1) * m], k, m, j, w);
            i += 1;
        }
        j += NR;
    }
}

#[inline(always)]
fn tile<const R: usize>(a: &[f64], panel: &[f64], c: &mut [f64], k: usize, m: usize, j: usize, w: usize) {
    let mut acc = [[0.0f64; NR]; R];
    for (p, bv) in panel.chunks_exact(NR).enumerate().take(k) {
        let bv: &[f64; NR] = bv.try_into().unwrap();
        for r in 0..R {
            let x = a[r * k + p];
            for t in 0..NR {
                acc[r][t] += x * bv[t];
            }
        }
    }
    for r in 0..R {
        c[r * m + j..r * m + j + w].copy_from_slice(&acc[r][..w]);
    }
}

/// `D[i,j] = ‖a_i − b_j‖²` for `a: n×d`, `b: m×d`.
///
/// The entry is accumulated coordinate by coordinate, so `D(a,b)` is the
/// exact transpose of `D(b,a)` and identical rows give exactly zero.
pub(crate) fn pairwise_sq_dists_raw(a: &[f64], b: &[f64], n: usize, m: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    let fill = |(i, row): (usize, &mut [f64])| {
        let ai = &a[i * d..(i + 1) * d];
        for (j, o) in row.iter_mut().enumerate() {
            let bj = &b[j * d..(j + 1) * d];
            let mut s = 0.0;
            for (x, y) in ai.iter().zip(bj) {
                let t = x - y;
                s += t * t;
            }
            *o = s.max(0.0);
        }
    };
    if n * m * d >= PAR_THRESHOLD && n >= 8 {
        out.par_chunks_mut(m).enumerate().for_each(fill);
    } else {
        out.chunks_mut(m).enumerate().for_each(fill);
    }
    out
}
