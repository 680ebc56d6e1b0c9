//! Kruskal-form CP models, MTTKRP and Khatri-Rao Gram matrices.

use nalgebra::DMatrixView;
use rand::Rng;

use crate::error::{Error, Result};
use crate::products::khatri_rao;
use crate::tensor::{check_shape, DenseTensor};
use crate::Matrix;

/// A rank-r CP model `⟦A_1, …, A_d⟧`; factor k is `n_k × r`.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalModel {
    factors: Vec<Matrix>,
}

impl KruskalModel {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        let r = factors
            .first()
            .ok_or_else(|| Error::InvalidArgument("model needs at least one factor".into()))?
            .ncols();
        if r == 0 {
            return Err(Error::InvalidArgument("rank must be positive".into()));
        }
        if factors.iter().any(|f| f.ncols() != r) {
            return Err(Error::Dimension("factors must share a column count".into()));
        }
        let shape: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
        check_shape(&shape)?;
        Ok(Self { factors })
    }

    /// Factors with i.i.d. uniform(0, 1) entries.
    pub fn random(shape: &[usize], rank: usize, rng: &mut impl Rng) -> Result<Self> {
        let factors = shape
            .iter()
            .map(|&n| Matrix::from_fn(n, rank, |_, _| rng.random::<f64>()))
            .collect();
        Self::new(factors)
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, k: usize) -> &Matrix {
        &self.factors[k]
    }

    pub fn set_factor(&mut self, k: usize, a: Matrix) -> Result<()> {
        let old = &self.factors[k];
        if a.shape() != old.shape() {
            return Err(Error::Dimension(format!(
                "factor {k} must be {:?}, got {:?}",
                old.shape(),
                a.shape()
            )));
        }
        self.factors[k] = a;
        Ok(())
    }

    pub fn into_factors(self) -> Vec<Matrix> {
        self.factors
    }

    /// Factors in `Z_k` order: `A_d, …, A_{k+1}, A_{k-1}, …, A_1`.
    pub fn z_order(&self, k: usize) -> Vec<&Matrix> {
        (0..self.order()).rev().filter(|&i| i != k).map(|i| &self.factors[i]).collect()
    }

    /// Materializes `Z_k` (M_k × r). For a single-mode model this is a 1 × r row of ones.
    pub fn khatri_rao_except(&self, k: usize) -> Matrix {
        let mats = self.z_order(k);
        if mats.is_empty() {
            return Matrix::from_element(1, self.rank(), 1.0);
        }
        khatri_rao(&mats).expect("factors share rank")
    }

    /// Dense reconstruction; entry `(i_1..i_d) = Σ_j Π_k A_k(i_k, j)`.
    pub fn full(&self) -> DenseTensor {
        let z = self.khatri_rao_except(0);
        let t0 = &self.factors[0] * z.transpose();
        DenseTensor::new(self.shape(), t0.as_slice().to_vec()).expect("shape is valid")
    }

    pub fn norm(&self) -> f64 {
        let mut g = Matrix::from_element(self.rank(), self.rank(), 1.0);
        for a in &self.factors {
            g.component_mul_assign(&a.tr_mul(a));
        }
        g.sum().max(0.0).sqrt()
    }

    /// Value of the model at a single multi-index.
    pub fn value_at(&self, idx: &[usize]) -> f64 {
        (0..self.rank())
            .map(|j| idx.iter().zip(&self.factors).map(|(&i, a)| a[(i, j)]).product::<f64>())
            .sum()
    }
}

/// See [`KruskalModel::full`].
pub fn kruskal_full(model: &KruskalModel) -> DenseTensor {
    model.full()
}

/// `B = T_(k) Z_k` without materializing `Z_k`.
///
/// The tensor is walked as `left × n_k × right` slabs; `Z_k` splits into the
/// Khatri-Rao product of the modes after k (rows `b`) and before k (rows `a`).
pub fn mttkrp(t: &DenseTensor, model: &KruskalModel, k: usize) -> Result<Matrix> {
    let d = t.order();
    if k >= d {
        return Err(Error::ModeOutOfRange { mode: k, order: d });
    }
    if model.order() != d {
        return Err(Error::Dimension(format!(
            "tensor has order {d}, model has order {}",
            model.order()
        )));
    }
    for i in (0..d).filter(|&i| i != k) {
        if model.factors[i].nrows() != t.shape()[i] {
            return Err(Error::Dimension(format!(
                "mode {i}: tensor size {} vs factor rows {}",
                t.shape()[i],
                model.factors[i].nrows()
            )));
        }
    }
    let r = model.rank();
    let left_mats: Vec<&Matrix> = (0..k).rev().map(|i| &model.factors[i]).collect();
    let right_mats: Vec<&Matrix> = (k + 1..d).rev().map(|i| &model.factors[i]).collect();
    let ones = Matrix::from_element(1, r, 1.0);
    let z_left = if left_mats.is_empty() { ones.clone() } else { khatri_rao(&left_mats)? };
    let z_right = if right_mats.is_empty() { ones } else { khatri_rao(&right_mats)? };

    let (left, n, right) = t.split_at_mode(k);
    let data = t.data();
    let mut out = Matrix::zeros(n, r);
    if left < right {
        // Contract the trailing modes with one gemm: Y = T_(left·n × right) Z_right,
        // then B(i, j) = Σ_a Y(a + left·i, j) Z_left(a, j).
        let y = DMatrixView::from_slice(data, left * n, right) * &z_right;
        for j in 0..r {
            let (ycol, zcol) = (y.column(j), z_left.column(j));
            for i in 0..n {
                out[(i, j)] = ycol.rows(left * i, left).dot(&zcol);
            }
        }
    } else {
        // One gemm per trailing index: Z_leftᵀ · slab (r × n), weighted by Z_right(b, :).
        let zlt = z_left.transpose();
        let mut tmp = Matrix::zeros(r, n);
        for b in 0..right {
            let slab = DMatrixView::from_slice(&data[left * n * b..left * n * (b + 1)], left, n);
            tmp.gemm(1.0, &zlt, &slab, 0.0);
            for j in 0..r {
                let w = z_right[(b, j)];
                if w != 0.0 {
                    out.column_mut(j).axpy(w, &tmp.row(j).transpose(), 1.0);
                }
            }
        }
    }
    Ok(out)
}

/// `V = Z_kᵀ Z_k`, computed as the Hadamard product of the per-mode Grams.
pub fn gram_khatri_rao(model: &KruskalModel, k: usize) -> Matrix {
    let r = model.rank();
    let mut v = Matrix::from_element(r, r, 1.0);
    for (i, a) in model.factors.iter().enumerate() {
        if i != k {
            v.component_mul_assign(&a.tr_mul(a));
        }
    }
    v
}
