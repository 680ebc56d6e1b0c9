mod args;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use cphifi_core::experiment::{run_experiment, DataSource, ExperimentSpec};
use cphifi_core::io;
use cphifi_core::linsolve::PcgConfig;
use cphifi_core::{
    cp_hifi, sample_uniform, synth_smooth_tensor, CpHifiConfig, Data, DenseTensor, Error,
    KernelKind, ModeKind, ObservationSet, Result, RkhsMode,
};

use args::{BenchArgs, Cli, Command, DecomposeArgs, InputArgs, ModelArgs, SampleArgs, SynthArgs};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Decompose(a) => decompose(a),
        Command::Bench(a) => bench(a),
        Command::Sample(a) => sample(a),
        Command::Synth(a) => synth(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_tensor(path: &Path, shape: Option<&[usize]>) -> Result<DenseTensor> {
    match shape {
        Some(s) => io::read_raw_tensor(path, s),
        None => io::read_tensor(path),
    }
}

fn load_input(input: &InputArgs) -> Result<Option<DataSource>> {
    if let Some(p) = &input.tensor {
        return Ok(Some(DataSource::Dense(load_tensor(p, input.shape.as_deref())?)));
    }
    if let Some(p) = &input.obs {
        let obs = io::read_observations(p)?;
        if let Some(s) = &input.shape {
            if s.as_slice() != obs.shape() {
                return Err(Error::Dimension(format!(
                    "--shape {s:?} disagrees with observation header {:?}",
                    obs.shape()
                )));
            }
        }
        return Ok(Some(DataSource::Observations(obs)));
    }
    Ok(None)
}

fn mode_kinds(shape: &[usize], m: &ModelArgs) -> Result<Vec<ModeKind>> {
    let d = shape.len();
    let check = |k: usize| {
        if k == 0 || k > d {
            Err(Error::ModeOutOfRange { mode: k, order: d })
        } else {
            Ok(k - 1)
        }
    };
    let mut sigma = vec![m.default_sigma; d];
    for &(k, s) in &m.sigmas {
        sigma[check(k)?] = s;
    }
    let mut points: Vec<Vec<f64>> = shape.iter().map(|&n| (1..=n).map(|i| i as f64).collect()).collect();
    for (k, path) in &m.points {
        points[check(*k)?] = io::read_points(path)?;
    }
    let mut finite = vec![false; d];
    for &k in &m.finite {
        finite[check(k)?] = true;
    }
    (0..d)
        .map(|k| {
            if finite[k] {
                Ok(ModeKind::Finite)
            } else {
                let pts = std::mem::take(&mut points[k]);
                Ok(ModeKind::infinite(RkhsMode::new(pts, sigma[k], KernelKind::Gaussian)?))
            }
        })
        .collect()
}

fn inner(m: &ModelArgs) -> PcgConfig {
    PcgConfig { tol: m.inner_tol, max_iter: m.max_inner, ..PcgConfig::default() }
}

fn decompose(a: DecomposeArgs) -> Result<()> {
    let source = load_input(&a.input)?
        .ok_or_else(|| Error::InvalidArgument("decompose needs --tensor or --obs".into()))?;
    let m = &a.model;
    let modes = mode_kinds(source.shape(), m)?;
    let mut cfg = CpHifiConfig::new(a.rank, modes, a.method);
    cfg.lambda = m.lambda;
    cfg.rho = m.rho;
    cfg.seed = m.seed;
    cfg.restarts = m.restarts;
    cfg.max_outer = m.max_outer;
    cfg.outer_tol = m.outer_tol;
    cfg.inner = inner(m);
    cfg.warm_start = m.warm_start;
    cfg.jobs = m.jobs;
    cfg.dense_cap = m.dense_cap;

    let sampled: ObservationSet;
    let data = match (&source, a.method.is_aligned()) {
        (DataSource::Dense(t), true) => Data::Aligned(t),
        (DataSource::Dense(t), false) => {
            let q = m.q.ok_or_else(|| {
                Error::InvalidArgument("unaligned method on a dense tensor needs --q".into())
            })?;
            sampled = sample_uniform(t, q, m.seed)?;
            Data::Unaligned(&sampled)
        }
        (DataSource::Observations(o), false) => Data::Unaligned(o),
        (DataSource::Observations(_), true) => {
            return Err(Error::SolverMismatch { solver: a.method.name(), data: "unaligned" })
        }
    };

    let res = cp_hifi(data, &cfg)?;

    fs::create_dir_all(&a.out)?;
    for (k, f) in res.model.factors().iter().enumerate() {
        io::write_matrix(a.out.join(format!("A{}.bin", k + 1)), f)?;
    }
    for (k, w) in res.weights.iter().enumerate() {
        if let Some(w) = w {
            io::write_matrix(a.out.join(format!("W{}.bin", k + 1)), w)?;
        }
    }
    io::write_trace(a.out.join("trace.csv"), &res.trace)?;
    let t = &res.trace;

    println!("method: {}", a.method);
    println!("rank: {}", a.rank);
    println!("restart: {} of {}", t.restart + 1, res.restarts.len());
    println!("outer_iters: {}", t.outer_iterations());
    println!("converged: {}", t.converged);
    println!("total_time_s: {:.6}", t.total_time.as_secs_f64());
    println!("rel_error: {:e}", t.final_error());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let source = match load_input(&a.input)? {
        Some(s) => s,
        None => {
            let shape = a.input.shape.as_deref().ok_or_else(|| {
                Error::InvalidArgument("bench needs --tensor, --obs or --shape".into())
            })?;
            let (t, _) = synth_smooth_tensor(shape, a.synth_rank, a.width, a.noise, a.model.seed)?;
            DataSource::Dense(t)
        }
    };
    let m = &a.model;
    let modes = mode_kinds(source.shape(), m)?;
    let mut spec = ExperimentSpec::new(a.name.clone(), source, modes);
    spec.lambda = m.lambda;
    spec.rho = m.rho;
    spec.ranks = a.ranks.clone();
    spec.solvers = a.methods.clone();
    spec.q = m.q;
    spec.restarts = m.restarts;
    spec.seed = m.seed;
    spec.max_outer = m.max_outer;
    spec.outer_tol = m.outer_tol;
    spec.inner = inner(m);
    spec.warm_start = m.warm_start;
    spec.jobs = m.jobs;
    spec.dense_cap = m.dense_cap;
    spec.out_dir = a.out.clone();
    for table in run_experiment(&spec)? {
        println!("{} ({} rows)", table.path.display(), table.rows.len());
    }
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let t = load_tensor(&a.tensor, a.shape.as_deref())?;
    let obs = sample_uniform(&t, a.q, a.seed)?;
    io::write_observations(&a.out, &obs)?;
    println!("{} ({} observations)", a.out.display(), obs.q());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let (t, _) = synth_smooth_tensor(&a.shape, a.rank, a.width, a.noise, a.seed)?;
    io::write_tensor(&a.out, &t)?;
    println!("{} (norm {:e})", a.out.display(), t.norm());
    Ok(())
}
