//! Solvers for the unaligned infinite-mode subproblem, where only the q
//! entries in Ω are known.
//!
//! The PCG route solves the ρ-shifted symmetric system
//! `(FᵀF + λ(I ⊗ K) + ρI) vec(W) = vec(K B)` matrix-free, with
//! `F = Sᵀ(Z ⊗ K)`. The baseline forms the nonsymmetric system
//! `(GᵀF + λI) vec(W) = vec(B)` with `G = Sᵀ(Z ⊗ I)` and LU-solves it.

use std::cell::RefCell;
use std::time::Instant;

use nalgebra::{DMatrixView, DMatrixViewMut};

use crate::error::{Error, Result};
use crate::kernel::{sym_eig, RkhsMode};
use crate::kruskal::{gram_khatri_rao, KruskalModel};
use crate::linsolve::{lu_solve_owned, pcg_from, LinearOperator, PcgConfig, SolveReport};
use crate::sampled::{build_zhat, gather_into, observed_mttkrp, scatter_into, ObservationSet};
use crate::{Matrix, Vector};

/// Largest number of entries (`q·r·n`) the dense F/G builders will allocate by default.
pub const DEFAULT_F_CAP: usize = 1 << 26;

/// One unaligned mode-k subproblem.
#[derive(Debug, Clone)]
pub struct UnalignedSubproblem<'a> {
    pub obs: &'a ObservationSet,
    pub k: usize,
    /// Ẑ (q × r), rows aligned with `obs`.
    pub zhat: Matrix,
    pub mode: &'a RkhsMode,
    /// Sampled MTTKRP (n × r).
    pub b: Matrix,
    /// Full Gram `ZᵀZ` (r × r).
    pub v: Matrix,
    pub lambda: f64,
    pub rho: f64,
}

impl<'a> UnalignedSubproblem<'a> {
    pub fn new(
        obs: &'a ObservationSet,
        k: usize,
        zhat: Matrix,
        v: Matrix,
        mode: &'a RkhsMode,
        lambda: f64,
        rho: f64,
    ) -> Result<Self> {
        if k >= obs.order() {
            return Err(Error::ModeOutOfRange { mode: k, order: obs.order() });
        }
        let r = zhat.ncols();
        if zhat.nrows() != obs.q() || v.shape() != (r, r) || mode.size() != obs.shape()[k] {
            return Err(Error::Dimension(format!(
                "unaligned subproblem: Ẑ {:?}, V {:?}, kernel {}, q = {}, n = {}",
                zhat.shape(),
                v.shape(),
                mode.size(),
                obs.q(),
                obs.shape()[k]
            )));
        }
        if !(lambda >= 0.0) || !(rho >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda and rho must be >= 0, got {lambda}, {rho}"
            )));
        }
        let b = observed_mttkrp(obs, &zhat, k)?;
        let v = (&v + v.transpose()) * 0.5;
        Ok(Self { obs, k, zhat, mode, b, v, lambda, rho })
    }

    /// Builds Ẑ, B and V from the current model.
    pub fn from_model(
        obs: &'a ObservationSet,
        model: &KruskalModel,
        k: usize,
        mode: &'a RkhsMode,
        lambda: f64,
        rho: f64,
    ) -> Result<Self> {
        let zhat = build_zhat(model, k, obs)?;
        let v = gram_khatri_rao(model, k);
        Self::new(obs, k, zhat, v, mode, lambda, rho)
    }

    pub fn n(&self) -> usize {
        self.mode.size()
    }

    pub fn rank(&self) -> usize {
        self.zhat.ncols()
    }

    /// γ = q / N.
    pub fn gamma(&self) -> f64 {
        self.obs.density()
    }

    /// `G'F vec(X)` reshaped to n × r: gather then scatter, no final K.
    fn gf_apply(&self, x: &Matrix) -> Matrix {
        let xhat = self.mode.kernel() * x;
        let mut xbar = vec![0.0; self.obs.q()];
        gather_into(&xhat, &self.zhat, self.obs, self.k, &mut xbar);
        let mut yhat = Matrix::zeros(self.n(), self.rank());
        scatter_into(self.obs, &xbar, &self.zhat, self.k, &mut yhat);
        yhat
    }

    /// Symmetric system applied to `vec(X)`, returned as n × r.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let op = UnalignedOperator::new(self);
        let y = op.apply(&Vector::from_column_slice(x.as_slice()));
        Matrix::from_column_slice(self.n(), self.rank(), y.as_slice())
    }

    /// Right-hand side `K B` of the symmetric system.
    pub fn rhs(&self) -> Matrix {
        self.mode.kernel() * &self.b
    }

    /// Relative residual of the ρ-shifted symmetric system.
    pub fn rel_residual(&self, w: &Matrix) -> f64 {
        let rhs = self.rhs();
        relative(&(self.apply(w) - &rhs), &rhs)
    }

    /// Relative residual of the nonsymmetric system `(GᵀF + λI) vec(W) = vec(B)`.
    pub fn nonsym_rel_residual(&self, w: &Matrix) -> f64 {
        let lhs = self.gf_apply(w) + w * self.lambda;
        relative(&(lhs - &self.b), &self.b)
    }

    /// `‖Sᵀ(Z ⊗ K) vec(W) − Sᵀ vec(T)‖² + λ tr(WᵀKW) + ρ‖W‖²`.
    pub fn objective(&self, w: &Matrix) -> f64 {
        let kw = self.mode.kernel() * w;
        let mut fitted = vec![0.0; self.obs.q()];
        gather_into(&kw, &self.zhat, self.obs, self.k, &mut fitted);
        let fit: f64 = fitted
            .iter()
            .zip(self.obs.values())
            .map(|(m, t)| (m - t) * (m - t))
            .sum();
        fit + self.lambda * w.dot(&kw) + self.rho * w.norm_squared()
    }

    fn check_f_cap(&self, cap: usize) -> Result<()> {
        let size = self.obs.q() * self.rank() * self.n();
        if size > cap {
            return Err(Error::TooLarge { size, cap });
        }
        Ok(())
    }

    fn check_dense_cap(&self, cap: usize) -> Result<()> {
        let rn = self.rank() * self.n();
        if rn > cap {
            return Err(Error::TooLarge { size: rn, cap });
        }
        Ok(())
    }
}

fn relative(diff: &Matrix, reference: &Matrix) -> f64 {
    let rn = reference.norm();
    if rn == 0.0 {
        diff.norm()
    } else {
        diff.norm() / rn
    }
}

fn kron_rows(p: &UnalignedSubproblem, row_of: impl Fn(usize, usize) -> f64) -> Matrix {
    let (n, r) = (p.n(), p.rank());
    let mut out = Matrix::zeros(p.obs.q(), r * n);
    for j in 0..r {
        for c in 0..n {
            let mut col = out.column_mut(c + n * j);
            for l in 0..p.obs.q() {
                col[l] = p.zhat[(l, j)] * row_of(l, c);
            }
        }
    }
    out
}

/// F (q × rn), row ℓ = `Ẑ(ℓ, :) ⊗ K(i_k^(ℓ), :)`.
pub fn build_f(p: &UnalignedSubproblem, cap: usize) -> Result<Matrix> {
    p.check_f_cap(cap)?;
    let kern = p.mode.kernel();
    Ok(kron_rows(p, |l, c| kern[(p.obs.index(l)[p.k], c)]))
}

/// G (q × rn), row ℓ = `Ẑ(ℓ, :) ⊗ e_{i_k^(ℓ)}ᵀ`.
pub fn build_g(p: &UnalignedSubproblem, cap: usize) -> Result<Matrix> {
    p.check_f_cap(cap)?;
    Ok(kron_rows(p, |l, c| if p.obs.index(l)[p.k] == c { 1.0 } else { 0.0 }))
}

/// Dense `GᵀF + λI` (rn × rn) without forming G or F.
///
/// Since G has one nonzero block per row, `GᵀF` has entries
/// `C_i(j, j') K(i, i')` with `C_i = Σ_{ℓ : i_k^(ℓ) = i} Ẑ(ℓ, :)ᵀ Ẑ(ℓ, :)`;
/// this forms it in O(q r² + r² n²) without materializing G or F.
pub fn assemble_nonsym_bucketed(p: &UnalignedSubproblem, cap: usize) -> Result<Matrix> {
    p.check_dense_cap(cap)?;
    let (n, r) = (p.n(), p.rank());
    let buckets = p.obs.buckets(p.k);
    let mut grams = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = Matrix::zeros(r, r);
        for &l in buckets.rows(i) {
            let z = p.zhat.row(l);
            c.ger(1.0, &z.transpose(), &z.transpose(), 1.0);
        }
        grams.push(c);
    }
    let kern = p.mode.kernel();
    let mut a = Matrix::zeros(r * n, r * n);
    for jp in 0..r {
        for ip in 0..n {
            let col = ip + n * jp;
            for j in 0..r {
                for i in 0..n {
                    a[(i + n * j, col)] = grams[i][(j, jp)] * kern[(i, ip)];
                }
            }
            a[(col, col)] += p.lambda;
        }
    }
    Ok(a)
}

/// Dense `GᵀF + λI` formed by materializing G and F (O(q r² n²)), the way
/// the baseline is costed.
pub fn assemble_nonsym_materialized(p: &UnalignedSubproblem, cap: usize) -> Result<Matrix> {
    p.check_dense_cap(cap)?;
    let g = build_g(p, DEFAULT_F_CAP)?;
    let f = build_f(p, DEFAULT_F_CAP)?;
    let mut a = g.transpose() * &f;
    for i in 0..a.nrows() {
        a[(i, i)] += p.lambda;
    }
    Ok(a)
}

/// Baseline: materialize G and F, then LU-solve `(GᵀF + λI) vec(W) = vec(B)`.
pub fn solve_unaligned_direct_nonsym(
    p: &UnalignedSubproblem,
    cap: usize,
) -> Result<(Matrix, SolveReport)> {
    let started = Instant::now();
    let a = assemble_nonsym_materialized(p, cap)?;
    let (x, pivot_ratio) = lu_solve_owned(a, &Vector::from_column_slice(p.b.as_slice()))?;
    let w = Matrix::from_column_slice(p.n(), p.rank(), x.as_slice());
    let mut report = SolveReport::direct(p.nonsym_rel_residual(&w), started);
    report.pivot_ratio = Some(pivot_ratio);
    Ok((w, report))
}

/// Matrix-free `FᵀF + λ(I ⊗ K) + ρI`.
pub struct UnalignedOperator<'p, 'a> {
    p: &'p UnalignedSubproblem<'a>,
    scratch: RefCell<Scratch>,
}

struct Scratch {
    xhat: Matrix,
    xbar: Vec<f64>,
    yhat: Matrix,
}

impl<'p, 'a> UnalignedOperator<'p, 'a> {
    pub fn new(p: &'p UnalignedSubproblem<'a>) -> Self {
        let (n, r) = (p.n(), p.rank());
        let scratch = Scratch {
            xhat: Matrix::zeros(n, r),
            xbar: vec![0.0; p.obs.q()],
            yhat: Matrix::zeros(n, r),
        };
        Self { p, scratch: RefCell::new(scratch) }
    }
}

impl LinearOperator for UnalignedOperator<'_, '_> {
    fn dim(&self) -> usize {
        self.p.n() * self.p.rank()
    }

    fn apply_into(&self, x: &Vector, y: &mut Vector) {
        let p = self.p;
        let (n, r) = (p.n(), p.rank());
        let kern = p.mode.kernel();
        let mut s = self.scratch.borrow_mut();
        let Scratch { xhat, xbar, yhat } = &mut *s;
        let xm = DMatrixView::from_slice(x.as_slice(), n, r);
        // x̂ = vec(K X)
        kern.mul_to(&xm, xhat);
        // x̄_ℓ = X̂(i_ℓ, :) · Ẑ(ℓ, :)
        gather_into(xhat, &p.zhat, p.obs, p.k, xbar);
        // Ŷ₁(i, :) = Σ_ℓ x̄_ℓ Ẑ(ℓ, :)
        scatter_into(p.obs, xbar, &p.zhat, p.k, yhat);
        let mut ym = DMatrixViewMut::from_slice(y.as_mut_slice(), n, r);
        kern.mul_to(yhat, &mut ym);
        ym.zip_zip_apply(xhat, &xm, |out, kx, xv| *out += p.lambda * kx + p.rho * xv);
    }
}

/// `(FᵀF + λ(I ⊗ K) + ρI) x` for `x = vec(X)`.
pub fn unaligned_matvec(p: &UnalignedSubproblem, x: &Vector) -> Vector {
    UnalignedOperator::new(p).apply(x)
}

/// Applies `M⁻¹` for `M = γ(V ⊗ K²) + λ(I ⊗ K) + ρI` through the
/// eigendecompositions of K and V.
#[derive(Debug, Clone)]
pub struct UnalignedPreconditioner<'a> {
    u_k: &'a Matrix,
    u_v: Matrix,
    /// Inverse eigenvalues of M, reshaped n × r.
    d: Matrix,
}

impl<'a> UnalignedPreconditioner<'a> {
    pub fn new(mode: &'a RkhsMode, v: &Matrix, gamma: f64, lambda: f64, rho: f64) -> Result<Self> {
        let ek = mode.eig();
        let ev = sym_eig(v)?;
        let (n, r) = (mode.size(), v.nrows());
        let mut d = Matrix::zeros(n, r);
        for j in 0..r {
            for i in 0..n {
                let dk = ek.values[i];
                let denom = gamma * ev.values[j] * dk * dk + lambda * dk + rho;
                if !(denom > 0.0) {
                    return Err(Error::ZeroDenominator);
                }
                d[(i, j)] = 1.0 / denom;
            }
        }
        Ok(Self { u_k: &ek.vectors, u_v: ev.vectors, d })
    }

    /// Dense M, for checking.
    pub fn dense_m(mode: &RkhsMode, v: &Matrix, gamma: f64, lambda: f64, rho: f64) -> Matrix {
        use crate::products::kronecker;
        let (n, r) = (mode.size(), v.nrows());
        let k = mode.kernel();
        kronecker(v, &(k * k)) * gamma
            + kronecker(&Matrix::identity(r, r), k) * lambda
            + Matrix::identity(n * r, n * r) * rho
    }
}

impl LinearOperator for UnalignedPreconditioner<'_> {
    fn dim(&self) -> usize {
        self.d.len()
    }

    fn apply_into(&self, x: &Vector, y: &mut Vector) {
        let (n, r) = self.d.shape();
        let xm = DMatrixView::from_slice(x.as_slice(), n, r);
        let mut core = self.u_k.tr_mul(&xm) * &self.u_v;
        core.component_mul_assign(&self.d);
        let mut ym = DMatrixViewMut::from_slice(y.as_mut_slice(), n, r);
        (self.u_k * core).mul_to(&self.u_v.transpose(), &mut ym);
    }
}

/// See [`UnalignedPreconditioner`].
pub fn build_preconditioner<'a>(p: &UnalignedSubproblem<'a>) -> Result<UnalignedPreconditioner<'a>> {
    UnalignedPreconditioner::new(p.mode, &p.v, p.gamma(), p.lambda, p.rho)
}

/// PCG on the ρ-shifted symmetric system with the Kronecker preconditioner.
pub fn solve_unaligned_pcg(
    p: &UnalignedSubproblem,
    cfg: &PcgConfig,
) -> Result<(Matrix, SolveReport)> {
    solve_unaligned_pcg_from(p, cfg, None)
}

/// [`solve_unaligned_pcg`] from an initial `W`.
pub fn solve_unaligned_pcg_from(
    p: &UnalignedSubproblem,
    cfg: &PcgConfig,
    w0: Option<&Matrix>,
) -> Result<(Matrix, SolveReport)> {
    if !(p.rho > 0.0) && !(p.lambda > 0.0) {
        return Err(Error::InvalidArgument("unaligned pcg needs rho > 0 or lambda > 0".into()));
    }
    let started = Instant::now();
    let op = UnalignedOperator::new(p);
    let precond = build_preconditioner(p)?;
    let rhs = Vector::from_column_slice(p.rhs().as_slice());
    let x0 = w0.map(|w| Vector::from_column_slice(w.as_slice()));
    let (x, mut report) = pcg_from(&op, &precond, &rhs, x0.as_ref(), cfg)?;
    report.wall_time = started.elapsed();
    Ok((Matrix::from_column_slice(p.n(), p.rank(), x.as_slice()), report))
}

/// Dense `FᵀF + λ(I ⊗ K) + ρI` and `vec(K B)`; a test oracle.
pub fn assemble_unaligned_sym_dense(p: &UnalignedSubproblem, cap: usize) -> Result<(Matrix, Vector)> {
    p.check_dense_cap(cap)?;
    let f = build_f(p, DEFAULT_F_CAP.max(p.obs.q() * p.rank() * p.n()))?;
    let (n, r) = (p.n(), p.rank());
    let mut a = f.transpose() * &f;
    let k = p.mode.kernel();
    for j in 0..r {
        let mut block = a.view_mut((n * j, n * j), (n, n));
        block += k * p.lambda;
    }
    for i in 0..n * r {
        a[(i, i)] += p.rho;
    }
    Ok((a, Vector::from_column_slice(p.rhs().as_slice())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aligned::{solve_aligned_direct, AlignedSubproblem, DEFAULT_DENSE_CAP};
    use crate::products::kronecker;
    use crate::sampled::sample_uniform;
    use crate::tensor::DenseTensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        obs: ObservationSet,
        model: KruskalModel,
        mode: RkhsMode,
    }

    fn fixture(shape: &[usize], r: usize, q: usize, seed: u64, k: usize) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = KruskalModel::random(shape, r, &mut rng).unwrap();
        let data = DenseTensor::from_fn(shape, |i| {
            i.iter().enumerate().map(|(m, &v)| ((m + 1) as f64 * 0.3 * v as f64).sin()).sum()
        })
        .unwrap();
        let obs = sample_uniform(&data, q, seed + 100).unwrap();
        let mode = RkhsMode::grid(shape[k], 1.0).unwrap();
        Fixture { obs, model, mode }
    }

    #[test]
    fn f_with_identity_kernel_is_g() {
        let fx = fixture(&[4, 3, 5], 2, 20, 1, 0);
        let ident = RkhsMode::from_kernel(Matrix::identity(4, 4)).unwrap();
        let p = UnalignedSubproblem::from_model(&fx.obs, &fx.model, 0, &ident, 0.1, 1e-6).unwrap();
        assert_eq!(build_f(&p, DEFAULT_F_CAP).unwrap(), build_g(&p, DEFAULT_F_CAP).unwrap());
    }

    #[test]
    fn aligned_f_is_kronecker() {
        let shape = [3, 4, 2];
        let t = DenseTensor::from_fn(&shape, |i| i[0] as f64 + 0.5 * i[2] as f64).unwrap();
        let obs = ObservationSet::full(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = KruskalModel::random(&shape, 2, &mut rng).unwrap();
        let k = 1;
        let mode = RkhsMode::grid(4, 1.3).unwrap();
        let p = UnalignedSubproblem::from_model(&obs, &model, k, &mode, 0.1, 1e-6).unwrap();
        let f = build_f(&p, DEFAULT_F_CAP).unwrap();
        let g = build_g(&p, DEFAULT_F_CAP).unwrap();
        let z = model.khatri_rao_except(k);
        let zk = kronecker(&z, mode.kernel());
        let zi = kronecker(&z, &Matrix::identity(4, 4));
        // observation ℓ sits at row i_k + n·m of Z ⊗ K
        for l in 0..obs.q() {
            let idx = obs.index(l);
            let m = idx[0] + shape[0] * idx[2];
            let row = idx[k] + 4 * m;
            assert!((f.row(l) - zk.row(row)).norm() < 1e-14);
            assert!((g.row(l) - zi.row(row)).norm() < 1e-14);
        }
    }

    #[test]
    fn single_observation_f() {
        let obs = ObservationSet::new(vec![3, 2], vec![2, 1], vec![1.5]).unwrap();
        let model = KruskalModel::new(vec![
            Matrix::from_element(3, 2, 1.0),
            Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        ])
        .unwrap();
        let mode = RkhsMode::grid(3, 1.0).unwrap();
        let p = UnalignedSubproblem::from_model(&obs, &model, 0, &mode, 0.1, 0.0).unwrap();
        let f = build_f(&p, DEFAULT_F_CAP).unwrap();
        assert_eq!(f.nrows(), 1);
        let kr = mode.kernel().row(2);
        for c in 0..3 {
            assert_eq!(f[(0, c)], 3.0 * kr[c]);
            assert_eq!(f[(0, 3 + c)], 4.0 * kr[c]);
        }
        assert!(matches!(build_f(&p, 2), Err(Error::TooLarge { .. })));
        let g = build_g(&p, DEFAULT_F_CAP).unwrap();
        assert_eq!(g.row(0).iter().copied().collect::<Vec<_>>(), vec![0., 0., 3., 0., 0., 4.]);
    }

    #[test]
    fn ones_zhat_rank_one_g_is_selection() {
        let fx = fixture(&[4, 3], 1, 6, 3, 0);
        let ones = KruskalModel::new(vec![Matrix::from_element(4, 1, 1.0), Matrix::from_element(3, 1, 1.0)])
            .unwrap();
        let p = UnalignedSubproblem::from_model(&fx.obs, &ones, 0, &fx.mode, 0.1, 0.0).unwrap();
        let g = build_g(&p, DEFAULT_F_CAP).unwrap();
        for l in 0..fx.obs.q() {
            for c in 0..4 {
                let expect = if fx.obs.index(l)[0] == c { 1.0 } else { 0.0 };
                assert_eq!(g[(l, c)], expect);
            }
        }
    }

    #[test]
    fn nonsym_assembly_matches_dense_product() {
        let fx = fixture(&[5, 4, 3], 3, 30, 4, 0);
        let p = UnalignedSubproblem::from_model(&fx.obs, &fx.model, 0, &fx.mode, 0.2, 1e-6).unwrap();
        let f = build_f(&p, DEFAULT_F_CAP).unwrap();
        let g = build_g(&p, DEFAULT_F_CAP).unwrap();
        let dense = g.tr_mul(&f) + Matrix::identity(15, 15) * 0.2;
        let fast = assemble_nonsym_bucketed(&p, DEFAULT_DENSE_CAP).unwrap();
        assert!((&dense - fast).norm() < 1e-12);
        let mat = assemble_nonsym_materialized(&p, DEFAULT_DENSE_CAP).unwrap();
        assert!((dense - mat).norm() < 1e-12);
    }

    #[test]
    fn matvec_matches_dense() {
        let fx = fixture(&[6, 5, 4], 2, 15, 5, 0);
        let p = UnalignedSubproblem::from_model(&fx.obs, &fx.model, 0, &fx.mode, 0.3, 0.01).unwrap();
        let (a, _) = assemble_unaligned_sym_dense(&p, DEFAULT_DENSE_CAP).unwrap();
        assert!((&a - a.transpose()).norm() == 0.0);
        let x = Vector::from_fn(12, |i, _| (i as f64 * 0.37).cos());
        let y = unaligned_matvec(&p, &x);
        assert!((&y - &a * &x).norm() <= 1e-10 * y.norm());
    }

    #[test]
    fn empty_observations() {
        let obs = ObservationSet::new(vec![4, 3], vec![], vec![]).unwrap();
        let model = KruskalModel::new(vec![Matrix::from_element(4, 2, 1.0), Matrix::from_element(3, 2, 1.0)]).unwrap();
        let mode = RkhsMode::grid(4, 1.0).unwrap();
        let (lambda, rho) = (0.5, 0.25);
        let p = UnalignedSubproblem::from_model(&obs, &model, 0, &mode, lambda, rho).unwrap();
        let x = Vector::from_fn(8, |i, _| i as f64 - 3.0);
        let xm = Matrix::from_column_slice(4, 2, x.as_slice());
        let expect = mode.kernel() * &xm * lambda + &xm * rho;
        assert!((unaligned_matvec(&p, &x) - Vector::from_column_slice(expect.as_slice())).norm() < 1e-14);

        let (a, _) = assemble_unaligned_sym_dense(&p, DEFAULT_DENSE_CAP).unwrap();
        let expect = kronecker(&Matrix::identity(2, 2), mode.kernel()) * lambda + Matrix::identity(8, 8) * rho;
        assert!((a - expect).norm() < 1e-14);

        let (w, _) = solve_unaligned_direct_nonsym(&p, DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(w, Matrix::zeros(4, 2));
    }

    #[test]
    fn aligned_matvec_reduces_with_identity_kernel() {
        let shape = [4, 3, 3];
        let t = DenseTensor::from_fn(&shape, |i| i[1] as f64).unwrap();
        let obs = ObservationSet::full(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = KruskalModel::random(&shape, 3, &mut rng).unwrap();
        let ident = RkhsMode::from_kernel(Matrix::identity(4, 4)).unwrap();
        let (lambda, rho) = (0.4, 0.1);
        let p = UnalignedSubproblem::from_model(&obs, &model, 0, &ident, lambda, rho).unwrap();
        let xm = Matrix::from_fn(4, 3, |i, j| (i + 3 * j) as f64 * 0.1 - 0.4);
        let expect = &xm * &p.v + &xm * (lambda + rho);
        assert!((p.apply(&xm) - expect).norm() < 1e-12);
    }

    #[test]
    fn preconditioner_matches_dense_inverse() {
        let fx = fixture(&[8, 5, 5], 3, 40, 7, 0);
        let p = UnalignedSubproblem::from_model(&fx.obs, &fx.model, 0, &fx.mode, 0.1, 1e-3).unwrap();
        let m = UnalignedPreconditioner::dense_m(&fx.mode, &p.v, p.gamma(), p.lambda, p.rho);
        let pre = build_preconditioner(&p).unwrap();
        let x = Vector::from_fn(24, |i, _| (i as f64).sin());
        let fast = pre.apply(&x);
        let dense = m.clone().lu().solve(&x).unwrap();
        assert!((&fast - &dense).norm() <= 1e-8 * dense.norm());
    }

    #[test]
    fn preconditioner_identity_case() {
        let ident = RkhsMode::from_kernel(Matrix::identity(3, 3)).unwrap();
        let pre = UnalignedPreconditioner::new(&ident, &Matrix::identity(2, 2), 1.0, 0.3, 0.2).unwrap();
        let x = Vector::from_fn(6, |i, _| i as f64 + 1.0);
        assert!((pre.apply(&x) - &x / 1.5).norm() < 1e-14);
    }

    #[test]
    fn pcg_on_full_observations_is_exact() {
        let shape = [6, 5, 4];
        let t = DenseTensor::from_fn(&shape, |i| (i[0] as f64 - i[2] as f64).cos()).unwrap();
        let obs = ObservationSet::full(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = KruskalModel::random(&shape, 3, &mut rng).unwrap();
        let mode = RkhsMode::grid(6, 1.0).unwrap();
        let p = UnalignedSubproblem::from_model(&obs, &model, 0, &mode, 0.1, 1e-6).unwrap();
        let (w, rep) = solve_unaligned_pcg(&p, &PcgConfig::default()).unwrap();
        assert!(rep.iterations <= 2, "{rep:?}");

        // the same subproblem through the aligned baseline
        let ap = AlignedSubproblem::new(p.b.clone(), p.v.clone(), &mode, 0.1).unwrap();
        let (wa, _) = solve_aligned_direct(&ap, DEFAULT_DENSE_CAP).unwrap();
        assert!((&w - &wa).norm() <= 1e-4 * wa.norm());

        // and the nonsymmetric direct solve coincides with the aligned one
        let (wn, _) = solve_unaligned_direct_nonsym(&p, DEFAULT_DENSE_CAP).unwrap();
        assert!((&wn - &wa).norm() <= 1e-8 * wa.norm());
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let fx = fixture(&[5, 4, 4], 2, 20, 9, 0);
        let zero_obs = ObservationSet::new(
            fx.obs.shape().to_vec(),
            (0..fx.obs.q()).flat_map(|l| fx.obs.index(l).to_vec()).collect(),
            vec![0.0; fx.obs.q()],
        )
        .unwrap();
        let p = UnalignedSubproblem::from_model(&zero_obs, &fx.model, 0, &fx.mode, 0.1, 1e-6).unwrap();
        let (w, rep) = solve_unaligned_pcg(&p, &PcgConfig::default()).unwrap();
        assert!(rep.iterations <= 1);
        assert_eq!(w, Matrix::zeros(5, 2));
    }

    #[test]
    fn pcg_matches_dense_symmetric_solve() {
        let fx = fixture(&[20, 20, 20], 4, 400, 10, 0);
        let p = UnalignedSubproblem::from_model(&fx.obs, &fx.model, 0, &fx.mode, 0.1, 1e-6).unwrap();
        let (a, rhs) = assemble_unaligned_sym_dense(&p, DEFAULT_DENSE_CAP).unwrap();
        let dense = a.cholesky().unwrap().solve(&rhs);
        let cfg = PcgConfig { tol: 1e-10, max_iter: 500, record_history: false };
        let (w, rep) = solve_unaligned_pcg(&p, &cfg).unwrap();
        assert!(rep.converged);
        let diff = (Vector::from_column_slice(w.as_slice()) - &dense).norm() / dense.norm();
        assert!(diff <= 1e-5, "diff {diff}");
    }

    #[test]
    fn row_order_is_irrelevant() {
        let fx = fixture(&[6, 5, 5], 2, 30, 11, 0);
        let perm: Vec<usize> = (0..30).rev().collect();
        let shuffled = fx.obs.permuted(&perm).unwrap();
        let p1 = UnalignedSubproblem::from_model(&fx.obs, &fx.model, 0, &fx.mode, 0.1, 1e-6).unwrap();
        let p2 = UnalignedSubproblem::from_model(&shuffled, &fx.model, 0, &fx.mode, 0.1, 1e-6).unwrap();
        let cfg = PcgConfig { tol: 1e-10, max_iter: 200, record_history: false };
        let (w1, _) = solve_unaligned_pcg(&p1, &cfg).unwrap();
        let (w2, _) = solve_unaligned_pcg(&p2, &cfg).unwrap();
        assert!((&w1 - &w2).norm() <= 1e-8 * w1.norm());
    }

    #[test]
    fn solution_minimizes_shifted_objective() {
        use rand::Rng;
        let fx = fixture(&[8, 6, 5], 3, 60, 12, 0);
        let p = UnalignedSubproblem::from_model(&fx.obs, &fx.model, 0, &fx.mode, 0.1, 1e-6).unwrap();
        let cfg = PcgConfig { tol: 1e-12, max_iter: 1000, record_history: false };
        let (w, _) = solve_unaligned_pcg(&p, &cfg).unwrap();
        let best = p.objective(&w);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let delta = Matrix::from_fn(8, 3, |_, _| rng.random_range(-1e-3..1e-3));
            assert!(p.objective(&(&w + delta)) >= best - 1e-12 * best);
        }
    }

    #[test]
    fn pcg_and_nonsym_agree_up_to_shift() {
        let cfg = PcgConfig { tol: 1e-11, max_iter: 1000, record_history: false };
        for (seed, rho) in [(13, 1e-6), (14, 1e-6), (15, 1e-4), (16, 1e-3)] {
            let fx = fixture(&[10, 6, 6], 3, 120, seed, 0);
            let lambda = 0.1;
            let p = UnalignedSubproblem::from_model(&fx.obs, &fx.model, 0, &fx.mode, lambda, rho).unwrap();
            let (wn, _) = solve_unaligned_direct_nonsym(&p, DEFAULT_DENSE_CAP).unwrap();
            let (wp, _) = solve_unaligned_pcg(&p, &cfg).unwrap();
            let bound = f64::max(1e-4, 10.0 * rho / lambda);
            let diff = (&wp - &wn).norm() / wn.norm();
            assert!(diff <= bound, "rho {rho}: diff {diff} > {bound}");
        }
    }
}
