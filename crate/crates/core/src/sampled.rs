//! Observed-entry sets (Ω) and the gather/scatter kernels that stand in for
//! the selection matrix S.

use std::collections::HashSet;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::{check_shape, linear_index, multi_index, DenseTensor};
use crate::Matrix;

/// For one mode, the observation numbers `ℓ` grouped by their mode index, in CSR form.
#[derive(Debug, Clone)]
pub struct ModeBuckets {
    offsets: Vec<usize>,
    members: Vec<usize>,
}

impl ModeBuckets {
    fn build(obs: &ObservationSet, k: usize) -> Self {
        let n = obs.shape[k];
        let mut counts = vec![0usize; n + 1];
        for l in 0..obs.q() {
            counts[obs.index(l)[k] + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut members = vec![0usize; obs.q()];
        for l in 0..obs.q() {
            let i = obs.index(l)[k];
            members[cursor[i]] = l;
            cursor[i] += 1;
        }
        Self { offsets, members }
    }

    /// Observations whose mode index equals `i`, in ascending `ℓ`.
    pub fn rows(&self, i: usize) -> &[usize] {
        &self.members[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The q known entries of a tensor: 0-based multi-indices plus values.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    shape: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    buckets: Vec<OnceLock<ModeBuckets>>,
}

impl ObservationSet {
    /// `indices` holds q consecutive d-tuples. Indices must be in range and distinct.
    pub fn new(shape: Vec<usize>, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let d = shape.len();
        if indices.len() != values.len() * d {
            return Err(Error::Dimension(format!(
                "{} values need {} index entries, got {}",
                values.len(),
                values.len() * d,
                indices.len()
            )));
        }
        let mut seen = HashSet::with_capacity(values.len());
        for (l, idx) in indices.chunks_exact(d).enumerate() {
            if let Some((k, _)) = idx.iter().zip(&shape).enumerate().find(|(_, (i, n))| i >= n) {
                return Err(Error::InvalidArgument(format!(
                    "observation {} has mode-{} index {} outside size {}",
                    l + 1,
                    k + 1,
                    idx[k] + 1,
                    shape[k]
                )));
            }
            if !seen.insert(linear_index(&shape, idx)) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate observation index {:?}",
                    idx.iter().map(|i| i + 1).collect::<Vec<_>>()
                )));
            }
        }
        let buckets = (0..d).map(|_| OnceLock::new()).collect();
        Ok(Self { shape, indices, values, buckets })
    }

    /// Every entry of `t` (aligned Ω), in storage order.
    pub fn full(t: &DenseTensor) -> Self {
        let d = t.order();
        let mut indices = Vec::with_capacity(t.len() * d);
        let mut idx = vec![0usize; d];
        for lin in 0..t.len() {
            multi_index(t.shape(), lin, &mut idx);
            indices.extend_from_slice(&idx);
        }
        let buckets = (0..d).map(|_| OnceLock::new()).collect();
        Self { shape: t.shape().to_vec(), indices, values: t.data().to_vec(), buckets }
    }

    /// Reads the values of `t` at the given 0-based linear indices.
    pub fn from_linear(t: &DenseTensor, linear: &[usize]) -> Result<Self> {
        let d = t.order();
        let mut indices = Vec::with_capacity(linear.len() * d);
        let mut idx = vec![0usize; d];
        let mut values = Vec::with_capacity(linear.len());
        for &lin in linear {
            if lin >= t.len() {
                return Err(Error::InvalidArgument(format!("linear index {lin} out of range")));
            }
            multi_index(t.shape(), lin, &mut idx);
            indices.extend_from_slice(&idx);
            values.push(t.data()[lin]);
        }
        Self::new(t.shape().to_vec(), indices, values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    /// Number of observations.
    pub fn q(&self) -> usize {
        self.values.len()
    }

    /// N, the number of entries in the full tensor.
    pub fn full_size(&self) -> usize {
        self.shape.iter().product()
    }

    /// γ = q / N.
    pub fn density(&self) -> f64 {
        self.q() as f64 / self.full_size() as f64
    }

    pub fn is_aligned(&self) -> bool {
        self.q() == self.full_size()
    }

    pub fn index(&self, l: usize) -> &[usize] {
        let d = self.order();
        &self.indices[l * d..(l + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mode-k buckets, built on first use and cached.
    pub fn buckets(&self, k: usize) -> &ModeBuckets {
        self.buckets[k].get_or_init(|| ModeBuckets::build(self, k))
    }

    /// Same observations in a different order (`perm[new] = old`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.q());
        for &l in perm {
            indices.extend_from_slice(self.index(l));
            values.push(self.values[l]);
        }
        Self::new(self.shape.clone(), indices, values)
    }
}

/// `‖T‖_Ω`, the 2-norm of the observed values.
pub fn omega_norm(obs: &ObservationSet) -> f64 {
    obs.values().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Draws q distinct linear indices uniformly without replacement; the result
/// is sorted ascending and depends only on `(N, q, seed)`.
pub fn sample_linear_indices(total: usize, q: usize, seed: u64) -> Result<Vec<usize>> {
    if q > total {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {q} entries from a tensor with {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, total, q).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Samples q entries of `t` uniformly without replacement.
pub fn sample_uniform(t: &DenseTensor, q: usize, seed: u64) -> Result<ObservationSet> {
    let picked = sample_linear_indices(t.len(), q, seed)?;
    ObservationSet::from_linear(t, &picked)
}

fn check_model(model: &KruskalModel, obs: &ObservationSet, k: usize) -> Result<()> {
    if k >= obs.order() {
        return Err(Error::ModeOutOfRange { mode: k, order: obs.order() });
    }
    if model.order() != obs.order() {
        return Err(Error::Dimension("model and observations differ in order".into()));
    }
    for (i, (a, &n)) in model.factors().iter().zip(obs.shape()).enumerate() {
        if i != k && a.nrows() != n {
            return Err(Error::Dimension(format!(
                "mode {i}: factor has {} rows, observations have size {n}",
                a.nrows()
            )));
        }
    }
    Ok(())
}

/// Ẑ (q × r): row ℓ is the Hadamard product of the factor rows (all modes but k)
/// at observation ℓ, i.e. the matching row of `Z_k`.
pub fn build_zhat(model: &KruskalModel, k: usize, obs: &ObservationSet) -> Result<Matrix> {
    check_model(model, obs, k)?;
    let r = model.rank();
    let q = obs.q();
    let mut zhat = Matrix::from_element(q, r, 1.0);
    for j in 0..r {
        let mut col = zhat.column_mut(j);
        for (i, a) in model.factors().iter().enumerate().rev() {
            if i == k {
                continue;
            }
            let acol = a.column(j);
            for l in 0..q {
                col[l] *= acol[obs.index(l)[i]];
            }
        }
    }
    Ok(zhat)
}

/// K̂ (q × n): row ℓ is row `i_k^(ℓ)` of the kernel.
pub fn build_khat(kernel: &Matrix, k: usize, obs: &ObservationSet) -> Result<Matrix> {
    if k >= obs.order() {
        return Err(Error::ModeOutOfRange { mode: k, order: obs.order() });
    }
    let n = kernel.nrows();
    if obs.shape()[k] > n {
        return Err(Error::Dimension(format!(
            "kernel has {n} rows but mode {k} has size {}",
            obs.shape()[k]
        )));
    }
    Ok(Matrix::from_fn(obs.q(), kernel.ncols(), |l, c| kernel[(obs.index(l)[k], c)]))
}

/// Scatter stage: row i of the result is `Σ_{ℓ : i_k^(ℓ) = i} weights[ℓ] Ẑ(ℓ, :)`.
///
/// With `weights = obs.values()` this is the sampled MTTKRP `B = T Z`.
pub fn sampled_mttkrp(
    obs: &ObservationSet,
    weights: &[f64],
    zhat: &Matrix,
    k: usize,
) -> Result<Matrix> {
    let q = obs.q();
    if zhat.nrows() != q || weights.len() != q {
        return Err(Error::Dimension(format!(
            "expected {q} weights and Ẑ rows, got {} and {}",
            weights.len(),
            zhat.nrows()
        )));
    }
    let n = obs.shape()[k];
    let mut out = Matrix::zeros(n, zhat.ncols());
    scatter_into(obs, weights, zhat, k, &mut out);
    Ok(out)
}

/// [`sampled_mttkrp`] with the observed values as weights.
pub fn observed_mttkrp(obs: &ObservationSet, zhat: &Matrix, k: usize) -> Result<Matrix> {
    sampled_mttkrp(obs, obs.values(), zhat, k)
}

pub(crate) fn scatter_into(
    obs: &ObservationSet,
    weights: &[f64],
    zhat: &Matrix,
    k: usize,
    out: &mut Matrix,
) {
    out.fill(0.0);
    let d = obs.order();
    let q = obs.q();
    for j in 0..zhat.ncols() {
        let zcol = zhat.column(j);
        let mut ocol = out.column_mut(j);
        for l in 0..q {
            ocol[obs.indices[l * d + k]] += weights[l] * zcol[l];
        }
    }
}

/// Gather stage: `x̄_ℓ = X̂(i_k^(ℓ), :) · Ẑ(ℓ, :)`.
pub fn gather_rows(
    xhat: &Matrix,
    zhat: &Matrix,
    obs: &ObservationSet,
    k: usize,
) -> Result<Vec<f64>> {
    if zhat.nrows() != obs.q() || xhat.ncols() != zhat.ncols() || xhat.nrows() != obs.shape()[k] {
        return Err(Error::Dimension(format!(
            "gather: X̂ {:?}, Ẑ {:?}, q = {}",
            xhat.shape(),
            zhat.shape(),
            obs.q()
        )));
    }
    let mut out = vec![0.0; obs.q()];
    gather_into(xhat, zhat, obs, k, &mut out);
    Ok(out)
}

pub(crate) fn gather_into(
    xhat: &Matrix,
    zhat: &Matrix,
    obs: &ObservationSet,
    k: usize,
    out: &mut [f64],
) {
    out.fill(0.0);
    let d = obs.order();
    for j in 0..zhat.ncols() {
        let zcol = zhat.column(j);
        let xcol = xhat.column(j);
        for (l, o) in out.iter_mut().enumerate() {
            *o += xcol[obs.indices[l * d + k]] * zcol[l];
        }
    }
}
