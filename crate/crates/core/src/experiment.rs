//! Rank × solver sweeps written as CSV tables.

use std::io::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::aligned::DEFAULT_DENSE_CAP;
use crate::als::{cp_hifi, deterministic_env, thread_pool, CpHifiConfig, Data, Solver};
use crate::error::{Error, Result};
use crate::kernel::ModeKind;
use crate::linsolve::PcgConfig;
use crate::sampled::{sample_uniform, ObservationSet};
use crate::tensor::DenseTensor;

/// Fixed CSV column order.
pub const CSV_COLUMNS: [&str; 8] = [
    "rank",
    "solver",
    "rel_error",
    "total_time_s",
    "outer_iters",
    "mean_inner_iters",
    "speedup_vs_direct",
    "note",
];

/// Input data of an experiment.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Fully observed tensor; unaligned runs sample `q` entries from it.
    Dense(DenseTensor),
    /// Scattered samples; only unaligned solvers apply.
    Observations(ObservationSet),
}

impl DataSource {
    pub fn shape(&self) -> &[usize] {
        match self {
            DataSource::Dense(t) => t.shape(),
            DataSource::Observations(o) => o.shape(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Used in output file names.
    pub dataset: String,
    pub source: DataSource,
    pub modes: Vec<ModeKind>,
    pub lambda: f64,
    pub rho: f64,
    pub ranks: Vec<usize>,
    pub solvers: Vec<Solver>,
    /// Number of sampled entries for unaligned runs on dense data.
    pub q: Option<usize>,
    pub restarts: usize,
    pub seed: u64,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub inner: PcgConfig,
    pub warm_start: bool,
    /// Largest `r·n` the dense baselines may materialize.
    pub dense_cap: usize,
    /// Concurrent sweep cells.
    pub jobs: usize,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    /// Defaults for everything but the data and the sweep axes.
    pub fn new(dataset: impl Into<String>, source: DataSource, modes: Vec<ModeKind>) -> Self {
        Self {
            dataset: dataset.into(),
            source,
            modes,
            lambda: 0.1,
            rho: 1e-6,
            ranks: vec![5],
            solvers: vec![Solver::AlignedDecoupled],
            q: None,
            restarts: 3,
            seed: 0,
            max_outer: 50,
            outer_tol: 1e-6,
            inner: PcgConfig::default(),
            warm_start: false,
            dense_cap: DEFAULT_DENSE_CAP,
            jobs: 1,
            out_dir: PathBuf::from("."),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ranks.is_empty() || self.solvers.is_empty() {
            return Err(Error::InvalidArgument("need at least one rank and one solver".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidArgument("jobs must be >= 1".into()));
        }
        let unaligned = self.solvers.iter().any(|s| !s.is_aligned());
        match &self.source {
            DataSource::Dense(t) if unaligned => match self.q {
                None => return Err(Error::InvalidArgument("unaligned solvers need q".into())),
                Some(q) if q > t.len() => {
                    return Err(Error::InvalidArgument(format!("q = {q} exceeds N = {}", t.len())))
                }
                _ => {}
            },
            DataSource::Observations(_) if self.solvers.iter().any(|s| s.is_aligned()) => {
                return Err(Error::InvalidArgument(
                    "aligned solvers need a dense tensor, not observations".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    fn config(&self, rank: usize, solver: Solver) -> CpHifiConfig {
        let mut cfg = CpHifiConfig::new(rank, self.modes.clone(), solver);
        cfg.lambda = self.lambda;
        cfg.rho = self.rho;
        cfg.restarts = self.restarts;
        cfg.seed = self.seed;
        cfg.max_outer = self.max_outer;
        cfg.outer_tol = self.outer_tol;
        cfg.inner = self.inner;
        cfg.warm_start = self.warm_start;
        cfg.dense_cap = self.dense_cap;
        cfg
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub rank: usize,
    pub solver: Solver,
    pub rel_error: f64,
    pub total_time_s: f64,
    pub outer_iters: usize,
    pub mean_inner_iters: f64,
    pub speedup_vs_direct: f64,
    pub note: String,
}

/// Rows of one (dataset, alignment) table and where they were written.
#[derive(Debug, Clone)]
pub struct ExperimentTable {
    pub alignment: &'static str,
    pub path: PathBuf,
    pub rows: Vec<ResultRow>,
}

fn run_cell(data: Data, spec: &ExperimentSpec, rank: usize, solver: Solver) -> ResultRow {
    let mut row = ResultRow {
        rank,
        solver,
        rel_error: f64::NAN,
        total_time_s: f64::NAN,
        outer_iters: 0,
        mean_inner_iters: f64::NAN,
        speedup_vs_direct: f64::NAN,
        note: String::new(),
    };
    match cp_hifi(data, &spec.config(rank, solver)) {
        Ok(res) => {
            let t = &res.trace;
            row.rel_error = t.final_error();
            row.total_time_s = t.total_time.as_secs_f64();
            row.outer_iters = t.outer_iterations();
            row.mean_inner_iters = t.mean_inner_iterations();
            let failed = res.restarts.iter().filter(|r| r.failure.is_some()).count();
            if failed > 0 {
                row.note = format!("{failed} restart(s) failed");
            }
        }
        Err(e) => row.note = e.to_string(),
    }
    row
}

fn sweep(data: Data, spec: &ExperimentSpec, solvers: &[Solver]) -> Result<Vec<ResultRow>> {
    let cells: Vec<(usize, Solver)> =
        spec.ranks.iter().flat_map(|&r| solvers.iter().map(move |&s| (r, s))).collect();
    let mut rows: Vec<ResultRow> = if spec.jobs > 1 && !deterministic_env() {
        thread_pool(spec.jobs)?.install(|| cells.par_iter().map(|&(r, s)| run_cell(data, spec, r, s)).collect())
    } else {
        cells.iter().map(|&(r, s)| run_cell(data, spec, r, s)).collect()
    };
    for i in 0..rows.len() {
        let base = rows
            .iter()
            .find(|b| b.rank == rows[i].rank && b.solver == rows[i].solver.baseline())
            .map(|b| b.total_time_s);
        if let Some(base) = base {
            rows[i].speedup_vs_direct = if rows[i].solver == rows[i].solver.baseline() {
                if base.is_finite() { 1.0 } else { f64::NAN }
            } else {
                base / rows[i].total_time_s
            };
        }
    }
    Ok(rows)
}

/// Renders a table: one `#` comment line with the run settings, the header,
/// then one line per row.
pub fn render_csv(
    spec: &ExperimentSpec,
    alignment: &str,
    extra: &str,
    rows: &[ResultRow],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let shape: Vec<String> = spec.source.shape().iter().map(usize::to_string).collect();
    writeln!(
        out,
        "# dataset={} alignment={alignment} shape={} lambda={} rho={} restarts={} seed={} \
         max_outer={} outer_tol={} max_inner={} inner_tol={} warm_start={} jobs={}{extra} \
         (timings comparable only at equal jobs)",
        spec.dataset,
        shape.join("x"),
        spec.lambda,
        spec.rho,
        spec.restarts,
        spec.seed,
        spec.max_outer,
        spec.outer_tol,
        spec.inner.max_iter,
        spec.inner.tol,
        spec.warm_start,
        spec.jobs,
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.rank.to_string(),
            r.solver.to_string(),
            format!("{:e}", r.rel_error),
            format!("{:.6}", r.total_time_s),
            r.outer_iters.to_string(),
            format!("{:.3}", r.mean_inner_iters),
            format!("{:.4}", r.speedup_vs_direct),
            r.note.clone(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Runs every (rank, solver) cell and writes `<dataset>_<alignment>.csv`
/// into `spec.out_dir` for each alignment present among the solvers.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ExperimentTable>> {
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir)?;
    let mut tables = Vec::new();
    let aligned: Vec<Solver> = spec.solvers.iter().copied().filter(|s| s.is_aligned()).collect();
    let unaligned: Vec<Solver> = spec.solvers.iter().copied().filter(|s| !s.is_aligned()).collect();

    if !aligned.is_empty() {
        if let DataSource::Dense(t) = &spec.source {
            let rows = sweep(Data::Aligned(t), spec, &aligned)?;
            tables.push(write_table(spec, "aligned", "", rows)?);
        }
    }
    if !unaligned.is_empty() {
        let sampled;
        let (obs, extra) = match &spec.source {
            DataSource::Dense(t) => {
                let q = spec.q.expect("validated");
                sampled = sample_uniform(t, q, spec.seed)?;
                (&sampled, format!(" q={q} sample_seed={}", spec.seed))
            }
            DataSource::Observations(o) => (o, format!(" q={}", o.q())),
        };
        let rows = sweep(Data::Unaligned(obs), spec, &unaligned)?;
        tables.push(write_table(spec, "unaligned", &extra, rows)?);
    }
    Ok(tables)
}

fn write_table(
    spec: &ExperimentSpec,
    alignment: &'static str,
    extra: &str,
    rows: Vec<ResultRow>,
) -> Result<ExperimentTable> {
    let path = spec.out_dir.join(format!("{}_{alignment}.csv", spec.dataset));
    fs::write(&path, render_csv(spec, alignment, extra, &rows)?)?;
    Ok(ExperimentTable { alignment, path, rows })
}

/// Parses a table written by [`run_experiment`] (comment lines skipped).
pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    if r.headers()?.iter().ne(CSV_COLUMNS) {
        return Err(Error::Parse(format!("unexpected header {:?}", r.headers()?)));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{s}`")));
    let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad integer `{s}`")));
    r.records()
        .map(|rec| {
            let f = rec?;
            Ok(ResultRow {
                rank: int(&f[0])?,
                solver: f[1].parse()?,
                rel_error: num(&f[2])?,
                total_time_s: num(&f[3])?,
                outer_iters: int(&f[4])?,
                mean_inner_iters: num(&f[5])?,
                speedup_vs_direct: num(&f[6])?,
                note: f[7].to_owned(),
            })
        })
        .collect()
}
