//! Synthetic smooth low-rank tensors, a desk-scale stand-in for sampled
//! physical fields.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::{check_shape, DenseTensor};
use crate::Matrix;

/// Default bump width (in grid units) of the synthetic profiles.
pub const DEFAULT_WIDTH: f64 = 3.0;

/// Planted factors: column `j` of mode `k` is a Gaussian bump
/// `exp(-(x - c)² / (2 w²))` on the grid `x = 1..n_k` with amplitude in
/// `[0.5, 1.5]`. Centers are stratified: `[1, n_k]` is split into `rank`
/// segments, each column gets a jittered center in its own segment, and the
/// segment order is shuffled per mode, so columns stay well separated.
pub fn synth_smooth_model(shape: &[usize], rank: usize, width: f64, seed: u64) -> Result<KruskalModel> {
    check_shape(shape)?;
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    if !(width > 0.0) {
        return Err(Error::InvalidArgument(format!("bump width must be > 0, got {width}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = shape
        .iter()
        .map(|&n| {
            let mut a = Matrix::zeros(n, rank);
            let mut order: Vec<usize> = (0..rank).collect();
            order.shuffle(&mut rng);
            for (j, &seg) in order.iter().enumerate() {
                let u = 0.25 + 0.5 * rng.random::<f64>();
                let c = 1.0 + (seg as f64 + u) / rank as f64 * (n as f64 - 1.0);
                let amp = 0.5 + rng.random::<f64>();
                for i in 0..n {
                    let x = (i + 1) as f64 - c;
                    a[(i, j)] = amp * (-x * x / (2.0 * width * width)).exp();
                }
            }
            a
        })
        .collect();
    KruskalModel::new(factors)
}

/// `Σ_j ⊗_k g_{k,j}` plus i.i.d. Gaussian noise scaled so that
/// `‖noise‖ ≈ noise · ‖signal‖`. Returns the tensor and the planted model.
pub fn synth_smooth_tensor(
    shape: &[usize],
    rank: usize,
    width: f64,
    noise: f64,
    seed: u64,
) -> Result<(DenseTensor, KruskalModel)> {
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise must be >= 0, got {noise}")));
    }
    let model = synth_smooth_model(shape, rank, width, seed)?;
    let mut t = model.full();
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let scale = noise * t.norm() / (t.len() as f64).sqrt();
        for v in t.data_mut() {
            *v += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok((t, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_is_planted_model() {
        let (t, m) = synth_smooth_tensor(&[6, 5, 4], 2, 2.0, 0.0, 3).unwrap();
        assert_eq!(t, m.full());
        assert!((t.norm() - m.norm()).abs() <= 1e-12 * t.norm());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_smooth_tensor(&[5, 5, 5], 3, 3.0, 0.1, 8).unwrap().0;
        let b = synth_smooth_tensor(&[5, 5, 5], 3, 3.0, 0.1, 8).unwrap().0;
        let c = synth_smooth_tensor(&[5, 5, 5], 3, 3.0, 0.1, 9).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_level_is_relative() {
        let (t, m) = synth_smooth_tensor(&[20, 20, 20], 2, 3.0, 0.1, 1).unwrap();
        let clean = m.full();
        let diff: f64 =
            t.data().iter().zip(clean.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let rel = diff / clean.norm();
        assert!((rel - 0.1).abs() < 0.01, "{rel}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(synth_smooth_tensor(&[3, 3], 0, 1.0, 0.0, 0).is_err());
        assert!(synth_smooth_tensor(&[3, 3], 1, 0.0, 0.0, 0).is_err());
        assert!(synth_smooth_tensor(&[3, 3], 1, 1.0, -1.0, 0).is_err());
    }
}
