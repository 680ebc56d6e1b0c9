//! Hybrid infinite/finite CP decomposition.
//!
//! Some tensor modes are ordinary finite factors; others are functions in a
//! reproducing kernel Hilbert space, represented as `A_k = K_k W_k` over a
//! kernel matrix `K_k`. The crate provides the alternating driver plus the
//! structured subproblem solvers for both fully observed (aligned) and
//! scattered-sample (unaligned) data.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod aligned;
pub mod als;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kernel;
pub mod kruskal;
pub mod linsolve;
pub mod products;
pub mod sampled;
pub mod synth;
pub mod tensor;
pub mod unaligned;

pub use als::{cp_hifi, AlsState, CpHifiConfig, CpHifiResult, Data, FitTrace, IterationRecord, Solver};
pub use error::{Error, Result};
pub use experiment::{run_experiment, DataSource, ExperimentSpec, ResultRow};
pub use kernel::{gaussian_kernel, sym_eig, KernelKind, ModeKind, RkhsMode, SymEig};
pub use kruskal::{gram_khatri_rao, kruskal_full, mttkrp, KruskalModel};
pub use linsolve::{LinearOperator, PcgConfig, SolveReport};
pub use products::{hadamard, khatri_rao, kronecker};
pub use sampled::{omega_norm, sample_uniform, ObservationSet};
pub use synth::{synth_smooth_model, synth_smooth_tensor};
pub use tensor::DenseTensor;

/// Dense column-major matrix used throughout.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;
