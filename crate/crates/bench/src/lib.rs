//! Shared fixtures for the criterion benchmarks in `benches/`.

use cphifi_core::{
    sample_uniform, synth_smooth_model, synth_smooth_tensor, DenseTensor, KruskalModel,
    ObservationSet, RkhsMode,
};

/// Smooth cubic tensor of side `n`, a rank-`r` model over it, and the mode-0 kernel.
pub fn aligned_fixture(n: usize, r: usize) -> (DenseTensor, KruskalModel, RkhsMode) {
    let (t, _) = synth_smooth_tensor(&[n, n, n], 3, 3.0, 0.01, 1).expect("valid shape");
    let model = synth_smooth_model(&[n, n, n], r, 4.0, 2).expect("valid shape");
    (t, model, RkhsMode::grid(n, 2.0).expect("valid kernel"))
}

/// [`aligned_fixture`] plus `q` uniformly sampled entries.
pub fn unaligned_fixture(
    shape: &[usize],
    r: usize,
    q: usize,
) -> (ObservationSet, KruskalModel, RkhsMode) {
    let (t, _) = synth_smooth_tensor(shape, 3, 3.0, 0.01, 1).expect("valid shape");
    let obs = sample_uniform(&t, q, 3).expect("q <= N");
    let model = synth_smooth_model(shape, r, 4.0, 2).expect("valid shape");
    (obs, model, RkhsMode::grid(shape[0], 2.0).expect("valid kernel"))
}
