//! Kernel matrices for the function-valued (RKHS) modes and their cached
//! symmetric eigendecompositions.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use nalgebra::{DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::Matrix;

/// Kernel families available for infinite-dimensional modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelKind {
    /// `exp(-(x - y)² / (2σ²))`
    #[default]
    Gaussian,
}

impl KernelKind {
    pub fn matrix(self, points: &[f64], sigma: f64) -> Result<Matrix> {
        match self {
            KernelKind::Gaussian => gaussian_kernel(points, sigma),
        }
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "rbf" => Ok(KernelKind::Gaussian),
            other => Err(Error::Parse(format!("unknown kernel `{other}`"))),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Gaussian => f.write_str("gaussian"),
        }
    }
}

/// Squared-exponential kernel matrix over scalar design points.
pub fn gaussian_kernel(points: &[f64], sigma: f64) -> Result<Matrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {sigma}")));
    }
    let scale = 1.0 / (2.0 * sigma * sigma);
    let n = points.len();
    let mut k = Matrix::identity(n, n);
    for j in 0..n {
        for i in 0..j {
            let d = points[i] - points[j];
            let v = (-d * d * scale).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Orthogonal eigendecomposition `K = U diag(d) Uᵀ` of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub vectors: Matrix,
    /// Eigenvalues, clamped at zero.
    pub values: DVector<f64>,
}

impl SymEig {
    pub fn reconstruct(&self) -> Matrix {
        let scaled = Matrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * self.values[j]
        });
        scaled * self.vectors.transpose()
    }
}

fn max_asymmetry(m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetric eigendecomposition with roundoff-negative eigenvalues clamped to 0.
pub fn sym_eig(m: &Matrix) -> Result<SymEig> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("sym_eig needs a square matrix, got {:?}", m.shape())));
    }
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(m.clone());
    let values = eig.eigenvalues.map(|v| v.max(0.0));
    Ok(SymEig { vectors: eig.eigenvectors, values })
}

/// One function-valued mode: design points, bandwidth, kernel matrix and its
/// eigendecomposition (computed at most once).
#[derive(Debug)]
pub struct RkhsMode {
    points: Vec<f64>,
    sigma: f64,
    kind: KernelKind,
    kernel: Matrix,
    eig: OnceLock<SymEig>,
    factorizations: AtomicUsize,
}

impl RkhsMode {
    pub fn new(points: Vec<f64>, sigma: f64, kind: KernelKind) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("an RKHS mode needs design points".into()));
        }
        let kernel = kind.matrix(&points, sigma)?;
        Ok(Self::with_kernel(points, sigma, kind, kernel))
    }

    /// Gaussian kernel over the integer grid `1..=n`.
    pub fn grid(n: usize, sigma: f64) -> Result<Self> {
        Self::new((1..=n).map(|i| i as f64).collect(), sigma, KernelKind::Gaussian)
    }

    /// Wraps an arbitrary symmetric PSD kernel matrix (points are the grid `1..=n`).
    pub fn from_kernel(kernel: Matrix) -> Result<Self> {
        if !kernel.is_square() {
            return Err(Error::Dimension("kernel must be square".into()));
        }
        let asym = max_asymmetry(&kernel);
        if asym > 1e-12 * kernel.amax().max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        let n = kernel.nrows();
        Ok(Self::with_kernel((1..=n).map(|i| i as f64).collect(), f64::NAN, KernelKind::Gaussian, kernel))
    }

    fn with_kernel(points: Vec<f64>, sigma: f64, kind: KernelKind, kernel: Matrix) -> Self {
        Self {
            points,
            sigma,
            kind,
            kernel,
            eig: OnceLock::new(),
            factorizations: AtomicUsize::new(0),
        }
    }

    pub fn size(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Bandwidth; NaN when built from an explicit kernel matrix.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn kernel(&self) -> &Matrix {
        &self.kernel
    }

    pub fn eig(&self) -> &SymEig {
        self.eig.get_or_init(|| {
            self.factorizations.fetch_add(1, Ordering::Relaxed);
            sym_eig(&self.kernel).expect("kernel symmetry checked at construction")
        })
    }

    /// How many times the kernel has been factorized (0 or 1).
    pub fn factorization_count(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }
}

/// Whether a mode's factor is a free matrix or constrained to `A = K W`.
#[derive(Debug, Clone)]
pub enum ModeKind {
    Finite,
    Infinite(Arc<RkhsMode>),
}

impl ModeKind {
    pub fn infinite(mode: RkhsMode) -> Self {
        ModeKind::Infinite(Arc::new(mode))
    }

    pub fn rkhs(&self) -> Option<&RkhsMode> {
        match self {
            ModeKind::Finite => None,
            ModeKind::Infinite(m) => Some(m),
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, ModeKind::Infinite(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_values() {
        let k = gaussian_kernel(&[0.0, 1.0], 1.0).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k[(0, 1)] - 0.60653).abs() < 1e-5);
        let same = gaussian_kernel(&[2.0, 2.0, 2.0], 0.3).unwrap();
        assert!(same.iter().all(|&v| v == 1.0));
        let wide = gaussian_kernel(&[0.0, 1.0, 5.0], 1e6).unwrap();
        assert!(wide.iter().all(|&v| (v - 1.0).abs() < 1e-10));
        assert!(gaussian_kernel(&[0.0], 0.0).is_err());
        assert!(gaussian_kernel(&[0.0], -1.0).is_err());
    }

    #[test]
    fn eig_simple() {
        let e = sym_eig(&Matrix::identity(4, 4)).unwrap();
        assert!(e.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let d = Matrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let e = sym_eig(&d).unwrap();
        let mut vals: Vec<f64> = e.values.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![1.0, 3.0]);
        assert!(e.vectors.iter().all(|&v| v.abs() < 1e-15 || (v.abs() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn eig_reconstructs_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = Matrix::from_fn(8, 8, |_, _| rng.random::<f64>() - 0.5);
        let k = &b * b.transpose();
        let e = sym_eig(&k).unwrap();
        assert!((e.reconstruct() - &k).norm() <= 1e-10 * k.norm());
        let ortho = e.vectors.tr_mul(&e.vectors) - Matrix::identity(8, 8);
        assert!(ortho.norm() <= 1e-10);
    }

    #[test]
    fn eig_rejects_nonsymmetric() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(sym_eig(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn gaussian_kernel_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [5, 50, 200] {
            let pts: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
            let k = gaussian_kernel(&pts, 0.7).unwrap();
            let raw = SymmetricEigen::new(k.clone()).eigenvalues;
            assert!(raw.min() >= -1e-10 * raw.max());
        }
    }

    #[test]
    fn eig_is_cached() {
        let mode = RkhsMode::grid(12, 2.0).unwrap();
        assert_eq!(mode.factorization_count(), 0);
        let first = mode.eig().values.clone();
        let _ = mode.eig();
        assert_eq!(mode.factorization_count(), 1);
        assert_eq!(first, mode.eig().values);
        let rec = mode.eig().reconstruct();
        assert!((rec - mode.kernel()).norm() <= 1e-10 * mode.kernel().norm());
    }

    #[test]
    fn kernel_registry() {
        assert_eq!("Gaussian".parse::<KernelKind>().unwrap(), KernelKind::Gaussian);
        assert!("matern".parse::<KernelKind>().is_err());
    }
}
