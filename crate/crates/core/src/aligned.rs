//! Solvers for the aligned infinite-mode subproblem
//! `(V ⊗ K + λI) vec(W) = vec(B)`.
//!
//! Three routes are provided: the dense Cholesky baseline, the decoupled
//! solve through the eigendecompositions of `K` and `V`, and PCG on the
//! system rotated into the eigenbasis of `K` with a diagonal preconditioner.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernel::{sym_eig, RkhsMode};
use crate::linsolve::{
    cholesky_solve_owned, pcg_from, Diagonal, FnOperator, PcgConfig, SolveReport,
};
use crate::products::kronecker;
use crate::{Matrix, Vector};

/// Largest `r·n` the dense baselines will materialize by default.
pub const DEFAULT_DENSE_CAP: usize = 6000;

/// One aligned mode-k subproblem.
#[derive(Debug, Clone)]
pub struct AlignedSubproblem<'a> {
    /// MTTKRP `T Z` (n × r).
    pub b: Matrix,
    /// Gram `ZᵀZ` (r × r), symmetrized on construction.
    pub v: Matrix,
    pub mode: &'a RkhsMode,
    pub lambda: f64,
}

impl<'a> AlignedSubproblem<'a> {
    pub fn new(b: Matrix, v: Matrix, mode: &'a RkhsMode, lambda: f64) -> Result<Self> {
        let (n, r) = b.shape();
        if n != mode.size() || v.shape() != (r, r) {
            return Err(Error::Dimension(format!(
                "aligned subproblem: B {:?}, V {:?}, kernel {}",
                b.shape(),
                v.shape(),
                mode.size()
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        let v = (&v + v.transpose()) * 0.5;
        Ok(Self { b, v, mode, lambda })
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn rank(&self) -> usize {
        self.b.ncols()
    }

    /// `K W V + λ W`, i.e. the system matrix applied to `vec(W)`.
    pub fn apply(&self, w: &Matrix) -> Matrix {
        self.mode.kernel() * w * &self.v + w * self.lambda
    }

    /// `‖(V ⊗ K + λI) vec(W) − vec(B)‖ / ‖B‖`, without forming the Kronecker product.
    pub fn rel_residual(&self, w: &Matrix) -> f64 {
        let bn = self.b.norm();
        let r = (self.apply(w) - &self.b).norm();
        if bn == 0.0 {
            r
        } else {
            r / bn
        }
    }

    /// Dense `V ⊗ K + λI`.
    pub fn dense_matrix(&self) -> Matrix {
        let rn = self.n() * self.rank();
        kronecker(&self.v, self.mode.kernel()) + Matrix::identity(rn, rn) * self.lambda
    }
}

/// Baseline: materialize `V ⊗ K + λI` and Cholesky-solve it.
pub fn solve_aligned_direct(p: &AlignedSubproblem, cap: usize) -> Result<(Matrix, SolveReport)> {
    let started = Instant::now();
    let (n, r) = (p.n(), p.rank());
    if n * r > cap {
        return Err(Error::TooLarge { size: n * r, cap });
    }
    let rhs = Matrix::from_column_slice(n * r, 1, p.b.as_slice());
    let x = cholesky_solve_owned(p.dense_matrix(), &rhs)?;
    let w = Matrix::from_column_slice(n, r, x.as_slice());
    let report = SolveReport::direct(p.rel_residual(&w), started);
    Ok((w, report))
}

/// `W = U_K ((U_Kᵀ B U_V) ∘ D) U_Vᵀ` with `D(i, j) = 1 / (d_V(j) d_K(i) + λ)`.
pub fn solve_aligned_decoupled(p: &AlignedSubproblem) -> Result<(Matrix, SolveReport)> {
    let started = Instant::now();
    let ek = p.mode.eig();
    let ev = sym_eig(&p.v)?;
    let mut core = ek.vectors.tr_mul(&p.b) * &ev.vectors;
    for j in 0..p.rank() {
        for i in 0..p.n() {
            let denom = ev.values[j] * ek.values[i] + p.lambda;
            if denom <= 0.0 {
                return Err(Error::ZeroDenominator);
            }
            core[(i, j)] /= denom;
        }
    }
    let w = &ek.vectors * core * ev.vectors.transpose();
    let report = SolveReport::direct(p.rel_residual(&w), started);
    Ok((w, report))
}

/// `(V ⊗ D_K + λI) x = vec(D_K X V + λX)` where `x = vec(X)`, X n × r.
pub fn aligned_matvec(x: &Vector, d_k: &Vector, v: &Matrix, lambda: f64) -> Vector {
    let mut y = Vector::zeros(x.len());
    aligned_matvec_into(x, d_k, v, lambda, &mut y);
    y
}

fn aligned_matvec_into(x: &Vector, d_k: &Vector, v: &Matrix, lambda: f64, y: &mut Vector) {
    let n = d_k.len();
    let r = v.nrows();
    let xm = nalgebra::DMatrixView::from_slice(x.as_slice(), n, r);
    let mut ym = nalgebra::DMatrixViewMut::from_slice(y.as_mut_slice(), n, r);
    xm.mul_to(v, &mut ym);
    for j in 0..r {
        for i in 0..n {
            ym[(i, j)] = d_k[i] * ym[(i, j)] + lambda * xm[(i, j)];
        }
    }
}

/// PCG on `(V ⊗ D_K + λI) vec(W̄) = vec(U_Kᵀ B)` with the diagonal
/// preconditioner `diag(diag(V)) ⊗ D_K + λI`; returns `W = U_K W̄`.
pub fn solve_aligned_pcg(p: &AlignedSubproblem, cfg: &PcgConfig) -> Result<(Matrix, SolveReport)> {
    solve_aligned_pcg_from(p, cfg, None)
}

/// [`solve_aligned_pcg`] starting from `w0` instead of zero.
pub fn solve_aligned_pcg_from(
    p: &AlignedSubproblem,
    cfg: &PcgConfig,
    w0: Option<&Matrix>,
) -> Result<(Matrix, SolveReport)> {
    let started = Instant::now();
    let (n, r) = (p.n(), p.rank());
    let ek = p.mode.eig();
    let d_k = &ek.values;
    let bbar = ek.vectors.tr_mul(&p.b);
    let rhs = Vector::from_column_slice(bbar.as_slice());

    let op = FnOperator::new(n * r, |x: &Vector, y: &mut Vector| {
        aligned_matvec_into(x, d_k, &p.v, p.lambda, y)
    });
    let mut diag = Vector::zeros(n * r);
    for j in 0..r {
        for i in 0..n {
            let denom = p.v[(j, j)] * d_k[i] + p.lambda;
            if denom <= 0.0 {
                return Err(Error::ZeroDenominator);
            }
            diag[i + n * j] = 1.0 / denom;
        }
    }
    let precond = Diagonal(diag);
    let x0 = w0.map(|w| Vector::from_column_slice(ek.vectors.tr_mul(w).as_slice()));
    let (xbar, mut report) = pcg_from(&op, &precond, &rhs, x0.as_ref(), cfg)?;
    let wbar = Matrix::from_column_slice(n, r, xbar.as_slice());
    let w = &ek.vectors * wbar;
    report.rel_residual = p.rel_residual(&w);
    report.wall_time = started.elapsed();
    Ok((w, report))
}
