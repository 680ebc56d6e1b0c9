//! Dense direct solves and a preconditioned conjugate gradient engine.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, LU};

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// A square linear map applied matrix-free. Operators handed to [`pcg`]
/// must be symmetric positive (semi)definite.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `y ← A x`.
    fn apply_into(&self, x: &Vector, y: &mut Vector);

    fn apply(&self, x: &Vector) -> Vector {
        let mut y = Vector::zeros(self.dim());
        self.apply_into(x, &mut y);
        y
    }
}

impl LinearOperator for Matrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_into(&self, x: &Vector, y: &mut Vector) {
        self.mul_to(x, y);
    }
}

/// The identity map (no preconditioning).
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply_into(&self, x: &Vector, y: &mut Vector) {
        y.copy_from(x);
    }
}

/// Diagonal scaling `y = d ∘ x`.
#[derive(Debug, Clone)]
pub struct Diagonal(pub Vector);

impl LinearOperator for Diagonal {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn apply_into(&self, x: &Vector, y: &mut Vector) {
        y.zip_zip_apply(x, &self.0, |o, a, b| *o = a * b);
    }
}

/// Adapts a closure into a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&Vector, &mut Vector)> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&Vector, &mut Vector)> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_into(&self, x: &Vector, y: &mut Vector) {
        (self.f)(x, y)
    }
}

/// Stopping rule for [`pcg`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgConfig {
    /// Relative residual `‖b − Ax‖ / ‖b‖` at which to stop.
    pub tol: f64,
    pub max_iter: usize,
    pub record_history: bool,
}

impl Default for PcgConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 75, record_history: false }
    }
}

impl PcgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(format!(
                "pcg needs tol > 0 and max_iter >= 1, got {} / {}",
                self.tol, self.max_iter
            )));
        }
        Ok(())
    }
}

/// Outcome of one subproblem solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    /// PCG iterations; 0 for direct solves.
    pub iterations: usize,
    pub rel_residual: f64,
    pub wall_time: Duration,
    pub converged: bool,
    /// Relative residual after each iteration, when requested.
    pub history: Vec<f64>,
    /// For LU solves: `max |u_ii| / min |u_ii|`, a cheap conditioning indicator.
    pub pivot_ratio: Option<f64>,
}

impl SolveReport {
    pub(crate) fn direct(rel_residual: f64, started: Instant) -> Self {
        Self {
            iterations: 0,
            rel_residual,
            wall_time: started.elapsed(),
            converged: true,
            ..Default::default()
        }
    }
}

/// Preconditioned conjugate gradients from `x₀ = 0`.
///
/// Stops when the recurrence residual satisfies `‖r‖ ≤ tol ‖b‖` or after
/// `max_iter` iterations; on nonconvergence the iterate with the smallest
/// residual is returned and `converged` is false.
pub fn pcg(
    a: &dyn LinearOperator,
    m_inv: &dyn LinearOperator,
    b: &Vector,
    cfg: &PcgConfig,
) -> Result<(Vector, SolveReport)> {
    pcg_from(a, m_inv, b, None, cfg)
}

/// [`pcg`] with an optional initial guess.
pub fn pcg_from(
    a: &dyn LinearOperator,
    m_inv: &dyn LinearOperator,
    b: &Vector,
    x0: Option<&Vector>,
    cfg: &PcgConfig,
) -> Result<(Vector, SolveReport)> {
    cfg.validate()?;
    let n = b.len();
    if a.dim() != n || m_inv.dim() != n || x0.is_some_and(|x| x.len() != n) {
        return Err(Error::Dimension(format!(
            "pcg: operator {}, preconditioner {}, rhs {n}",
            a.dim(),
            m_inv.dim()
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(0));
    }
    let started = Instant::now();
    let bnorm = b.norm();
    let mut report = SolveReport::default();
    if bnorm == 0.0 {
        report.converged = true;
        report.wall_time = started.elapsed();
        return Ok((Vector::zeros(n), report));
    }

    let mut x = x0.cloned().unwrap_or_else(|| Vector::zeros(n));
    let mut r = b.clone();
    let mut ap = Vector::zeros(n);
    if x0.is_some() {
        a.apply_into(&x, &mut ap);
        r -= &ap;
    }
    let mut rel = r.norm() / bnorm;
    let mut best = (rel, x.clone());
    if rel <= cfg.tol {
        report.rel_residual = rel;
        report.converged = true;
        report.wall_time = started.elapsed();
        return Ok((x, report));
    }

    let mut z = Vector::zeros(n);
    m_inv.apply_into(&r, &mut z);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    if !rz.is_finite() {
        return Err(Error::NonFinite(0));
    }

    for it in 1..=cfg.max_iter {
        a.apply_into(&p, &mut ap);
        let curvature = p.dot(&ap);
        if !curvature.is_finite() {
            return Err(Error::NonFinite(it));
        }
        if curvature <= 0.0 {
            return Err(Error::Breakdown { iteration: it, curvature });
        }
        let alpha = rz / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        rel = r.norm() / bnorm;
        if !rel.is_finite() {
            return Err(Error::NonFinite(it));
        }
        report.iterations = it;
        if cfg.record_history {
            report.history.push(rel);
        }
        if rel <= cfg.tol {
            report.converged = true;
            break;
        }
        if rel < best.0 {
            best = (rel, x.clone());
        }
        m_inv.apply_into(&r, &mut z);
        let rz_next = r.dot(&z);
        if !rz_next.is_finite() {
            return Err(Error::NonFinite(it));
        }
        let beta = rz_next / rz;
        rz = rz_next;
        p.axpy(1.0, &z, beta);
    }

    if !report.converged && best.0 < rel {
        rel = best.0;
        x = best.1;
    }
    report.rel_residual = rel;
    report.wall_time = started.elapsed();
    Ok((x, report))
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    cholesky_solve_owned(a.clone(), b)
}

pub(crate) fn cholesky_solve_owned(a: Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "cholesky_solve: A {:?}, B {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let chol = Cholesky::new(a).ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(b))
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    lu_solve_owned(a.clone(), b).map(|(x, _)| x)
}

/// Returns the solution and the pivot ratio `max |u_ii| / min |u_ii|`.
pub(crate) fn lu_solve_owned(a: Matrix, b: &Vector) -> Result<(Vector, f64)> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(Error::Dimension(format!("lu_solve: A {:?}, b {}", a.shape(), b.len())));
    }
    let lu = LU::new(a);
    let (lo, hi) = lu
        .u()
        .diagonal()
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if lo == 0.0 || !(hi / lo).is_finite() {
        return Err(Error::Singular);
    }
    let x = lu.solve(b).ok_or(Error::Singular)?;
    Ok((x, hi / lo))
}
