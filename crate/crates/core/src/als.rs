//! The alternating outer loop: per-mode dispatch to the finite or
//! infinite-mode solvers, error/objective tracking and restarts.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aligned::{
    solve_aligned_decoupled, solve_aligned_direct, solve_aligned_pcg_from, AlignedSubproblem,
    DEFAULT_DENSE_CAP,
};
use crate::error::{Error, Result};
use crate::kernel::{sym_eig, ModeKind, RkhsMode};
use crate::kruskal::{gram_khatri_rao, mttkrp, KruskalModel};
use crate::linsolve::{PcgConfig, SolveReport};
use crate::sampled::{build_zhat, gather_into, omega_norm, ObservationSet};
use crate::tensor::DenseTensor;
use crate::unaligned::{solve_unaligned_direct_nonsym, solve_unaligned_pcg_from, UnalignedSubproblem};
use crate::Matrix;

/// Subproblem solver used for every infinite mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Solver {
    AlignedDirect,
    AlignedDecoupled,
    AlignedPcg,
    UnalignedDirectNonsym,
    UnalignedPcg,
}

impl Solver {
    pub const ALL: [Solver; 5] = [
        Solver::AlignedDirect,
        Solver::AlignedDecoupled,
        Solver::AlignedPcg,
        Solver::UnalignedDirectNonsym,
        Solver::UnalignedPcg,
    ];

    pub fn is_aligned(self) -> bool {
        matches!(self, Solver::AlignedDirect | Solver::AlignedDecoupled | Solver::AlignedPcg)
    }

    /// The dense baseline of this solver's family.
    pub fn baseline(self) -> Solver {
        if self.is_aligned() {
            Solver::AlignedDirect
        } else {
            Solver::UnalignedDirectNonsym
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, Solver::AlignedPcg | Solver::UnalignedPcg)
    }

    pub fn name(self) -> &'static str {
        match self {
            Solver::AlignedDirect => "aligned-direct",
            Solver::AlignedDecoupled => "aligned-decoupled",
            Solver::AlignedPcg => "aligned-pcg",
            Solver::UnalignedDirectNonsym => "unaligned-direct",
            Solver::UnalignedPcg => "unaligned-pcg",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        Solver::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .or(match s.as_str() {
                "unaligned-direct-nonsym" => Some(Solver::UnalignedDirectNonsym),
                _ => None,
            })
            .ok_or_else(|| {
                Error::Parse(format!(
                    "unknown method `{s}` (expected one of: {})",
                    Solver::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

/// The data being decomposed.
#[derive(Debug, Clone, Copy)]
pub enum Data<'a> {
    Aligned(&'a DenseTensor),
    Unaligned(&'a ObservationSet),
}

impl Data<'_> {
    pub fn shape(&self) -> &[usize] {
        match self {
            Data::Aligned(t) => t.shape(),
            Data::Unaligned(o) => o.shape(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Data::Aligned(_) => "aligned",
            Data::Unaligned(_) => "unaligned",
        }
    }

    fn norm(&self) -> f64 {
        match self {
            Data::Aligned(t) => t.norm(),
            Data::Unaligned(o) => omega_norm(o),
        }
    }
}

/// Settings for one decomposition.
#[derive(Debug, Clone)]
pub struct CpHifiConfig {
    pub rank: usize,
    pub modes: Vec<ModeKind>,
    pub solver: Solver,
    /// RKHS regularization, shared by all infinite modes.
    pub lambda: f64,
    /// Identity shift for the unaligned PCG system.
    pub rho: f64,
    pub max_outer: usize,
    /// Stop when the relative error changes by at most this much in a sweep.
    pub outer_tol: f64,
    pub inner: PcgConfig,
    pub restarts: usize,
    pub seed: u64,
    /// Start each PCG solve from the previous W instead of zero.
    pub warm_start: bool,
    /// Largest `r·n` the dense baselines may materialize.
    pub dense_cap: usize,
    /// Record the objective after every mode update (costs a reconstruction each).
    pub track_mode_objectives: bool,
    /// Restarts run concurrently on up to this many threads.
    pub jobs: usize,
}

impl CpHifiConfig {
    pub fn new(rank: usize, modes: Vec<ModeKind>, solver: Solver) -> Self {
        Self {
            rank,
            modes,
            solver,
            lambda: 0.1,
            rho: 1e-6,
            max_outer: 50,
            outer_tol: 1e-6,
            inner: PcgConfig::default(),
            restarts: 3,
            seed: 0,
            warm_start: false,
            dense_cap: DEFAULT_DENSE_CAP,
            track_mode_objectives: false,
            jobs: 1,
        }
    }

    pub fn validate(&self, data: &Data) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be >= 1".into()));
        }
        if self.restarts == 0 || self.jobs == 0 {
            return Err(Error::InvalidArgument("restarts and jobs must be >= 1".into()));
        }
        let shape = data.shape();
        if self.modes.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "{} mode kinds for a tensor of order {}",
                self.modes.len(),
                shape.len()
            )));
        }
        for (k, (m, &n)) in self.modes.iter().zip(shape).enumerate() {
            if let Some(rk) = m.rkhs() {
                if rk.size() != n {
                    return Err(Error::Dimension(format!(
                        "mode {}: {} design points for size {n}",
                        k + 1,
                        rk.size()
                    )));
                }
            }
        }
        match (self.solver.is_aligned(), data) {
            (true, Data::Aligned(_)) | (false, Data::Unaligned(_)) => {}
            _ => {
                return Err(Error::SolverMismatch { solver: self.solver.name(), data: data.kind() })
            }
        }
        if self.modes.iter().any(ModeKind::is_infinite) && !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument("lambda must be > 0".into()));
        }
        if self.solver == Solver::UnalignedPcg && !(self.rho > 0.0) {
            return Err(Error::InvalidArgument("rho must be > 0 for unaligned pcg".into()));
        }
        if !(self.outer_tol >= 0.0) {
            return Err(Error::InvalidArgument("outer_tol must be >= 0".into()));
        }
        self.inner.validate()
    }
}

/// State after one outer sweep.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// Fit-only relative error (Ω-restricted for unaligned data).
    pub rel_error: f64,
    /// Squared fit plus `Σ_k λ tr(W_kᵀ K_k W_k)` over infinite modes.
    pub objective: f64,
    /// Time since the start of the run.
    pub elapsed: Duration,
    /// One entry per mode; `None` for finite modes.
    pub reports: Vec<Option<SolveReport>>,
    /// Objective after each mode update, when tracked.
    pub mode_objectives: Vec<f64>,
}

/// History of one restart.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub restart: usize,
    pub initial_error: f64,
    pub initial_objective: f64,
    pub iterations: Vec<IterationRecord>,
    pub total_time: Duration,
    pub converged: bool,
    pub failure: Option<String>,
}

impl FitTrace {
    pub fn final_error(&self) -> f64 {
        if self.failure.is_some() {
            return f64::NAN;
        }
        self.iterations.last().map_or(self.initial_error, |it| it.rel_error)
    }

    pub fn final_objective(&self) -> f64 {
        self.iterations.last().map_or(self.initial_objective, |it| it.objective)
    }

    pub fn outer_iterations(&self) -> usize {
        self.iterations.len()
    }

    /// Mean PCG iterations per subproblem solve (0 for direct solvers).
    pub fn mean_inner_iterations(&self) -> f64 {
        let (sum, count) = self
            .iterations
            .iter()
            .flat_map(|it| it.reports.iter().flatten())
            .fold((0usize, 0usize), |(s, c), r| (s + r.iterations, c + 1));
        if count == 0 {
            0.0
        } else {
            sum as f64 / count as f64
        }
    }
}

/// Factor and weight matrices of a fitted model plus the traces of all restarts.
#[derive(Debug, Clone)]
pub struct CpHifiResult {
    pub model: KruskalModel,
    /// `W_k` for infinite modes (`A_k = K_k W_k`).
    pub weights: Vec<Option<Matrix>>,
    /// Trace of the selected (lowest-error) restart.
    pub trace: FitTrace,
    pub restarts: Vec<FitTrace>,
}

/// Current factors during an alternating run.
#[derive(Debug, Clone)]
pub struct AlsState<'a> {
    data: Data<'a>,
    cfg: &'a CpHifiConfig,
    model: KruskalModel,
    weights: Vec<Option<Matrix>>,
    data_norm: f64,
}

impl<'a> AlsState<'a> {
    /// Random start for restart `restart`; depends only on `(cfg.seed, restart)`.
    pub fn init(data: Data<'a>, cfg: &'a CpHifiConfig, restart: usize) -> Result<Self> {
        cfg.validate(&data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(restart as u64);
        let model = KruskalModel::random(data.shape(), cfg.rank, &mut rng)?;
        Self::from_model(data, cfg, model)
    }

    /// Starts from given factors. Infinite-mode factors are projected onto
    /// the kernel range: `W = (K + εI)⁻¹ A` with tiny ε, then `A = K W`.
    pub fn from_model(data: Data<'a>, cfg: &'a CpHifiConfig, model: KruskalModel) -> Result<Self> {
        cfg.validate(&data)?;
        if model.shape() != data.shape() || model.rank() != cfg.rank {
            return Err(Error::Dimension("initial model does not match data/rank".into()));
        }
        let data_norm = data.norm();
        if data_norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let mut state =
            Self { data, cfg, model, weights: vec![None; cfg.modes.len()], data_norm };
        for k in 0..cfg.modes.len() {
            if let Some(rk) = cfg.modes[k].rkhs() {
                let a = state.model.factor(k).clone();
                let eps = 1e-8 * rk.eig().values.max().max(1.0);
                let p = AlignedSubproblem::new(a, Matrix::identity(cfg.rank, cfg.rank), rk, eps)?;
                let (w, _) = solve_aligned_decoupled(&p)?;
                state.set_weights(k, rk, w)?;
            }
        }
        Ok(state)
    }

    pub fn model(&self) -> &KruskalModel {
        &self.model
    }

    pub fn weights(&self) -> &[Option<Matrix>] {
        &self.weights
    }

    pub fn into_parts(self) -> (KruskalModel, Vec<Option<Matrix>>) {
        (self.model, self.weights)
    }

    fn set_weights(&mut self, k: usize, rk: &RkhsMode, w: Matrix) -> Result<()> {
        self.model.set_factor(k, rk.kernel() * &w)?;
        self.weights[k] = Some(w);
        Ok(())
    }

    /// Solves the mode-k RKHS subproblem with the configured solver and sets
    /// `W_k` and `A_k = K_k W_k`.
    pub fn update_infinite_mode(&mut self, k: usize) -> Result<SolveReport> {
        let cfg = self.cfg;
        let rk = cfg.modes[k].rkhs().ok_or_else(|| {
            Error::InvalidArgument(format!("mode {} is not an infinite mode", k + 1))
        })?;
        let warm = if cfg.warm_start { self.weights[k].clone() } else { None };
        let (w, report) = match self.data {
            Data::Aligned(t) => {
                let b = mttkrp(t, &self.model, k)?;
                let v = gram_khatri_rao(&self.model, k);
                let p = AlignedSubproblem::new(b, v, rk, cfg.lambda)?;
                match cfg.solver {
                    Solver::AlignedDirect => solve_aligned_direct(&p, cfg.dense_cap)?,
                    Solver::AlignedDecoupled => solve_aligned_decoupled(&p)?,
                    Solver::AlignedPcg => solve_aligned_pcg_from(&p, &cfg.inner, warm.as_ref())?,
                    s => return Err(Error::SolverMismatch { solver: s.name(), data: "aligned" }),
                }
            }
            Data::Unaligned(obs) => {
                let p = UnalignedSubproblem::from_model(obs, &self.model, k, rk, cfg.lambda, cfg.rho)?;
                match cfg.solver {
                    Solver::UnalignedDirectNonsym => solve_unaligned_direct_nonsym(&p, cfg.dense_cap)?,
                    Solver::UnalignedPcg => solve_unaligned_pcg_from(&p, &cfg.inner, warm.as_ref())?,
                    s => return Err(Error::SolverMismatch { solver: s.name(), data: "unaligned" }),
                }
            }
        };
        self.set_weights(k, rk, w)?;
        Ok(report)
    }

    /// Unregularized least-squares update of a finite mode (minimum-norm
    /// solution when the normal equations are singular).
    pub fn update_finite_mode(&mut self, k: usize) -> Result<()> {
        let a = match self.data {
            Data::Aligned(t) => {
                let b = mttkrp(t, &self.model, k)?;
                let v = gram_khatri_rao(&self.model, k);
                b * pseudo_inverse(&v)?
            }
            Data::Unaligned(obs) => {
                let zhat = build_zhat(&self.model, k, obs)?;
                let buckets = obs.buckets(k);
                let r = self.cfg.rank;
                let mut a = Matrix::zeros(obs.shape()[k], r);
                for i in 0..buckets.len() {
                    let rows = buckets.rows(i);
                    if rows.is_empty() {
                        continue;
                    }
                    let mut c = Matrix::zeros(r, r);
                    let mut rhs = Matrix::zeros(1, r);
                    for &l in rows {
                        let z = zhat.row(l);
                        c += z.transpose() * z;
                        rhs += z * obs.values()[l];
                    }
                    a.set_row(i, &(rhs * pseudo_inverse(&c)?).row(0));
                }
                a
            }
        };
        self.model.set_factor(k, a)
    }

    /// One sweep over all modes in ascending order.
    pub fn sweep(&mut self) -> Result<(Vec<Option<SolveReport>>, Vec<f64>)> {
        let d = self.cfg.modes.len();
        let mut reports = Vec::with_capacity(d);
        let mut objectives = Vec::new();
        for k in 0..d {
            if self.cfg.modes[k].is_infinite() {
                reports.push(Some(self.update_infinite_mode(k)?));
            } else {
                self.update_finite_mode(k)?;
                reports.push(None);
            }
            if self.cfg.track_mode_objectives {
                objectives.push(self.objective());
            }
        }
        Ok((reports, objectives))
    }

    fn residual_norm_sq(&self) -> f64 {
        match self.data {
            Data::Aligned(t) => {
                let full = self.model.full();
                t.data().iter().zip(full.data()).map(|(a, b)| (a - b) * (a - b)).sum()
            }
            Data::Unaligned(obs) => {
                let zhat = build_zhat(&self.model, 0, obs).expect("validated shapes");
                let mut fitted = vec![0.0; obs.q()];
                gather_into(self.model.factor(0), &zhat, obs, 0, &mut fitted);
                fitted.iter().zip(obs.values()).map(|(m, t)| (m - t) * (m - t)).sum()
            }
        }
    }

    /// `‖T − ⟦A⟧‖ / ‖T‖`, restricted to Ω for unaligned data.
    pub fn relative_error(&self) -> f64 {
        self.fit_stats().0
    }

    /// Squared fit plus `Σ_k λ tr(W_kᵀ K_k W_k)` over infinite modes.
    pub fn objective(&self) -> f64 {
        self.fit_stats().1
    }

    /// Relative error and objective from a single residual evaluation.
    pub fn fit_stats(&self) -> (f64, f64) {
        let res = self.residual_norm_sq();
        let reg: f64 = self
            .weights
            .iter()
            .zip(self.model.factors())
            .filter_map(|(w, a)| w.as_ref().map(|w| w.dot(a)))
            .sum();
        (res.sqrt() / self.data_norm, res + self.cfg.lambda * reg)
    }
}

/// Minimum-norm inverse of a symmetric PSD matrix.
fn pseudo_inverse(v: &Matrix) -> Result<Matrix> {
    let e = sym_eig(&((v + v.transpose()) * 0.5))?;
    let cutoff = v.nrows() as f64 * f64::EPSILON * e.values.max();
    let inv = e.values.map(|d| if d > cutoff && d > 0.0 { 1.0 / d } else { 0.0 });
    let scaled = Matrix::from_fn(v.nrows(), v.ncols(), |i, j| e.vectors[(i, j)] * inv[j]);
    Ok(scaled * e.vectors.transpose())
}

/// Runs one restart to completion. Solver failures end the run and are recorded.
pub fn run_restart<'a>(
    data: Data<'a>,
    cfg: &'a CpHifiConfig,
    restart: usize,
) -> Result<(AlsState<'a>, FitTrace)> {
    let state = AlsState::init(data, cfg, restart)?;
    Ok(run_from(state, restart))
}

/// Continues alternating from an existing state.
pub fn run_from(mut state: AlsState<'_>, restart: usize) -> (AlsState<'_>, FitTrace) {
    let cfg = state.cfg;
    let started = Instant::now();
    let (initial_error, initial_objective) = state.fit_stats();
    let mut trace = FitTrace {
        restart,
        initial_error,
        initial_objective,
        iterations: Vec::with_capacity(cfg.max_outer),
        total_time: Duration::ZERO,
        converged: false,
        failure: None,
    };
    let mut prev = initial_error;
    for _ in 0..cfg.max_outer {
        match state.sweep() {
            Ok((reports, mode_objectives)) => {
                let (rel_error, objective) = state.fit_stats();
                trace.iterations.push(IterationRecord {
                    rel_error,
                    objective,
                    elapsed: started.elapsed(),
                    reports,
                    mode_objectives,
                });
                if (rel_error - prev).abs() <= cfg.outer_tol {
                    trace.converged = true;
                    break;
                }
                prev = rel_error;
            }
            Err(e) => {
                trace.failure = Some(e.to_string());
                break;
            }
        }
    }
    trace.total_time = started.elapsed();
    (state, trace)
}

pub(crate) fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// `CPHIFI_DETERMINISTIC=1` disables all optional parallelism.
pub fn deterministic_env() -> bool {
    std::env::var("CPHIFI_DETERMINISTIC").is_ok_and(|v| v == "1")
}

/// Fits a CP-HIFI model: `cfg.restarts` independent seeded runs, keeping the
/// one with the lowest final relative error.
pub fn cp_hifi(data: Data<'_>, cfg: &CpHifiConfig) -> Result<CpHifiResult> {
    cfg.validate(&data)?;
    let run = |i: usize| run_restart(data, cfg, i).map(|(s, t)| (s.into_parts(), t));
    let runs: Vec<_> = if cfg.jobs > 1 && cfg.restarts > 1 && !deterministic_env() {
        thread_pool(cfg.jobs.min(cfg.restarts))?
            .install(|| (0..cfg.restarts).into_par_iter().map(run).collect())
    } else {
        (0..cfg.restarts).map(run).collect()
    };
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, (_, t))| t.failure.is_none())
        .min_by(|(_, (_, a)), (_, (_, b))| a.final_error().total_cmp(&b.final_error()))
        .map(|(i, _)| i);
    let Some(best) = best else {
        let msg = runs[0].1.failure.clone().unwrap_or_default();
        return Err(Error::InvalidArgument(format!("every restart failed: {msg}")));
    };
    let restarts: Vec<FitTrace> = runs.iter().map(|(_, t)| t.clone()).collect();
    let ((model, weights), trace) = runs.into_iter().nth(best).expect("index in range");
    Ok(CpHifiResult { model, weights, trace, restarts })
}
