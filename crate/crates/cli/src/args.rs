use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use cphifi_core::Solver;

/// Hybrid infinite/finite CP decomposition and solver benchmarks.
#[derive(Parser, Debug)]
#[command(name = "cphifi", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit one model; writes factor/weight matrices and a trace CSV.
    Decompose(DecomposeArgs),
    /// Rank × solver sweep; writes one CSV per alignment.
    Bench(BenchArgs),
    /// Sample q entries of a tensor into an observation file.
    Sample(SampleArgs),
    /// Write a synthetic smooth low-rank tensor.
    Synth(SynthArgs),
}

/// Where the data comes from.
#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Dense tensor file (`shape:` header + f64 blob, or a raw blob with --shape)
    #[arg(long, conflicts_with = "obs")]
    pub tensor: Option<PathBuf>,

    /// Observation file (`# shape:` header, then `i1 .. id value` per line)
    #[arg(long)]
    pub obs: Option<PathBuf>,

    /// Tensor dimensions (for raw blobs, or for the synthetic data of `bench`)
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub shape: Option<Vec<usize>>,
}

/// Mode kinds and model settings shared by `decompose` and `bench`.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Kernel width for mode k (1-based), e.g. `--sigma 3=1.5`; repeatable
    #[arg(long = "sigma", value_name = "K=V", value_parser = parse_key_value::<f64>)]
    pub sigmas: Vec<(usize, f64)>,

    /// Default kernel width for modes without --sigma
    #[arg(long, default_value_t = 2.0)]
    pub default_sigma: f64,

    /// Treat mode k (1-based) as an ordinary finite mode; repeatable
    #[arg(long = "finite", value_name = "K")]
    pub finite: Vec<usize>,

    /// Design points of mode k from a file (one per line), e.g. `--points 1=x.txt`
    #[arg(long = "points", value_name = "K=FILE", value_parser = parse_key_value::<PathBuf>)]
    pub points: Vec<(usize, PathBuf)>,

    /// RKHS regularization
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,

    /// Identity shift of the unaligned PCG system
    #[arg(long, default_value_t = 1e-6)]
    pub rho: f64,

    /// Number of sampled entries when an unaligned method runs on a dense tensor
    #[arg(long)]
    pub q: Option<usize>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 3)]
    pub restarts: usize,

    #[arg(long, default_value_t = 50)]
    pub max_outer: usize,

    /// Stop when the relative error changes by at most this much per sweep
    #[arg(long, default_value_t = 1e-6)]
    pub outer_tol: f64,

    #[arg(long, default_value_t = 75)]
    pub max_inner: usize,

    #[arg(long, default_value_t = 1e-6)]
    pub inner_tol: f64,

    /// Start PCG from the previous W instead of zero
    #[arg(long)]
    pub warm_start: bool,

    /// Largest r·n the dense baselines may materialize
    #[arg(long, default_value_t = cphifi_core::aligned::DEFAULT_DENSE_CAP)]
    pub dense_cap: usize,

    /// Worker threads (restarts for `decompose`, sweep cells for `bench`)
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// CP rank
    #[arg(long)]
    pub rank: usize,

    /// aligned-direct | aligned-decoupled | aligned-pcg | unaligned-direct | unaligned-pcg
    #[arg(long, default_value = "aligned-decoupled")]
    pub method: Solver,

    /// Output directory
    #[arg(long, default_value = "cphifi-out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// CP ranks to sweep
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub ranks: Vec<usize>,

    /// Solvers to compare; repeatable or comma-separated
    #[arg(long = "method", required = true, num_args = 1.., value_delimiter = ',')]
    pub methods: Vec<Solver>,

    /// Dataset name used in the CSV file names
    #[arg(long, default_value = "synthetic")]
    pub name: String,

    /// Planted rank of the synthetic tensor (when no --tensor/--obs is given)
    #[arg(long, default_value_t = 3)]
    pub synth_rank: usize,

    #[arg(long, default_value_t = cphifi_core::synth::DEFAULT_WIDTH)]
    pub width: f64,

    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,

    /// Output directory
    #[arg(long, default_value = "cphifi-bench")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub tensor: PathBuf,

    /// Dimensions, for a raw blob without header
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub shape: Option<Vec<usize>>,

    #[arg(long)]
    pub q: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Observation file to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub shape: Vec<usize>,

    #[arg(long)]
    pub rank: usize,

    /// Bump width of the planted profiles, in grid units
    #[arg(long, default_value_t = cphifi_core::synth::DEFAULT_WIDTH)]
    pub width: f64,

    /// Relative Gaussian noise level
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Tensor file to write
    #[arg(long, default_value = "synth.tensor")]
    pub out: PathBuf,
}

fn parse_key_value<T>(s: &str) -> Result<(usize, T), String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected K=VALUE, got `{s}`"))?;
    let k: usize = k.trim().parse().map_err(|_| format!("bad mode `{k}`"))?;
    if k == 0 {
        return Err("modes are numbered from 1".into());
    }
    let v = v.trim().parse().map_err(|e| format!("bad value `{v}`: {e}"))?;
    Ok((k, v))
}
