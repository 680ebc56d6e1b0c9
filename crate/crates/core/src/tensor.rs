//! Dense tensors in column-major (first index fastest) storage.

use nalgebra::DMatrixView;

use crate::error::{Error, Result};
use crate::Matrix;

/// Highest tensor order supported.
pub const MAX_ORDER: usize = 8;

/// A dense d-way array. `data` is `vec(T)`: the first index varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "tensor order must be in 1..={MAX_ORDER}, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "mode sizes must be positive, got {shape:?}"
        )));
    }
    shape.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).ok_or_else(|| {
        Error::InvalidArgument(format!("tensor of shape {shape:?} is too large"))
    })
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self { shape: shape.to_vec(), data: vec![0.0; len] })
    }

    /// Builds a tensor by evaluating `f` at every multi-index (0-based), in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    /// Total number of entries N.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `vec(T)`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        linear_index(&self.shape, idx)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    /// Frobenius norm, equal to `‖vec(T)‖₂`.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Product of all mode sizes except `k`.
    pub fn complement_size(&self, k: usize) -> usize {
        self.len() / self.shape[k]
    }

    fn check_mode(&self, k: usize) -> Result<()> {
        if k >= self.order() {
            return Err(Error::ModeOutOfRange { mode: k, order: self.order() });
        }
        Ok(())
    }

    /// Splits the storage around mode `k` as `left × n_k × right`.
    pub(crate) fn split_at_mode(&self, k: usize) -> (usize, usize, usize) {
        let left: usize = self.shape[..k].iter().product();
        let right: usize = self.shape[k + 1..].iter().product();
        (left, self.shape[k], right)
    }

    /// Mode-k unfolding `T_(k)` (n_k × M_k). Column `j` is the column-major
    /// linearization of the remaining indices in ascending mode order, which
    /// makes `unfold(full(A), k) = A_k Z_kᵀ`.
    pub fn unfold(&self, k: usize) -> Result<Matrix> {
        self.check_mode(k)?;
        let (left, n, right) = self.split_at_mode(k);
        let mut out = Matrix::zeros(n, left * right);
        for b in 0..right {
            let slab = DMatrixView::from_slice(&self.data[left * n * b..left * n * (b + 1)], left, n);
            for i in 0..n {
                for a in 0..left {
                    out[(i, a + left * b)] = slab[(a, i)];
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &Matrix, k: usize, shape: &[usize]) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.check_mode(k)?;
        let (left, n, right) = t.split_at_mode(k);
        if m.nrows() != n || m.ncols() != left * right {
            return Err(Error::Dimension(format!(
                "cannot fold a {}x{} matrix into mode {k} of {shape:?}",
                m.nrows(),
                m.ncols()
            )));
        }
        for b in 0..right {
            for i in 0..n {
                for a in 0..left {
                    t.data[a + left * (i + n * b)] = m[(i, a + left * b)];
                }
            }
        }
        Ok(t)
    }
}

pub(crate) fn linear_index(shape: &[usize], idx: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), idx.len());
    let mut lin = 0;
    let mut stride = 1;
    for (&i, &n) in idx.iter().zip(shape) {
        debug_assert!(i < n);
        lin += i * stride;
        stride *= n;
    }
    lin
}

pub(crate) fn multi_index(shape: &[usize], mut lin: usize, out: &mut [usize]) {
    for (o, &n) in out.iter_mut().zip(shape) {
        *o = lin % n;
        lin /= n;
    }
}

/// Advances a column-major multi-index by one position.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}
