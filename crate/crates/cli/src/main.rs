use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;
mod parse;

/// Small-noise analysis of jump-diffusion generators.
#[derive(Debug, Parser)]
#[command(name = "ldpkit", version)]
struct Cli {
    /// Where to write the run manifest. Defaults to `<out>.manifest.json`,
    /// or `ldpkit-<command>.manifest.json` when there is no output file.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample paths and histogram the states at the final time.
    Simulate(SimulateArgs),
    /// Empirical rate function from a sampled ensemble.
    Ldf(LdfArgs),
    /// Integrate the deterministic limit.
    Ode(OdeArgs),
    /// Newton search for a fixed point of the deterministic limit.
    Fixedpoint(FixedpointArgs),
    /// Hamilton-Jacobi residuals of a candidate on a grid.
    HjeCheck(HjeCheckArgs),
    /// Candidate value and its rate of change along the deterministic limit.
    Lyapunov(LyapunovArgs),
    /// Integrate Hamilton's equations and report energy drift.
    Hamilton(HamiltonArgs),
    /// Minimize the discrete action between two states.
    Path(PathArgs),
    /// Entropy-balance ledger along the deterministic limit.
    Entropy(EntropyArgs),
    /// Master-equation stationary distribution, balances and affinities.
    Master(MasterArgs),
}

#[derive(Debug, Args)]
struct SamplingArgs {
    /// Model JSON.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long)]
    t_end: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial state, comma separated; zeros by default.
    #[arg(long, allow_hyphen_values = true)]
    z0: Option<String>,
    /// Bins per dimension, or `lo:hi:bins` per dimension separated by `;`.
    #[arg(long, allow_hyphen_values = true)]
    bins: Option<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Histogram CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the first sampled trajectory as CSV.
    #[arg(long)]
    trajectory_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Debug, Args)]
struct LdfArgs {
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Rate-function CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ldpkit::simulate::DEFAULT_MIN_COUNT)]
    min_count: u64,
    /// Compare with the one-dimensional OU rate function `a,D` at time `t_end`.
    #[arg(long, allow_hyphen_values = true)]
    ou_reference: Option<String>,
}

#[derive(Debug, Args)]
struct OdeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    z0: String,
    #[arg(long)]
    t_end: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FixedpointArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    guess: String,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CandidateKind {
    /// `a |z|^2 / (2 D)`.
    Ou,
    /// `sum z ln(z / zss) - z + zss`.
    Relent,
    /// Piecewise-linear one-dimensional table from CSV `z,phi`.
    Table,
}

#[derive(Debug, Args)]
struct CandidateArgs {
    #[arg(long, value_enum)]
    candidate: CandidateKind,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long = "D", default_value_t = 1.0)]
    diffusion: f64,
    #[arg(long, allow_hyphen_values = true)]
    zss: Option<String>,
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HjeCheckArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    candidate: CandidateArgs,
    /// `lo:hi:n`, one per dimension separated by `;` (tensor grid).
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    /// Check the transient OU equation on these times (`lo:hi:n`) instead.
    #[arg(long, allow_hyphen_values = true)]
    times: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LyapunovArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    candidate: CandidateArgs,
    #[arg(long, allow_hyphen_values = true)]
    z0: String,
    #[arg(long)]
    t_end: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct HamiltonArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    z0: String,
    #[arg(long, allow_hyphen_values = true)]
    y0: String,
    #[arg(long)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QuadratureKind {
    Midpoint,
    Left,
}

#[derive(Debug, Args)]
struct PathArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    from: String,
    #[arg(long, allow_hyphen_values = true)]
    to: String,
    #[arg(long = "T")]
    horizon: f64,
    #[arg(long = "N", default_value_t = 200)]
    segments: usize,
    #[arg(long, default_value_t = 1e-7)]
    gtol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iters: usize,
    #[arg(long, value_enum, default_value_t = QuadratureKind::Midpoint)]
    quadrature: QuadratureKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EntropyArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    candidate: CandidateArgs,
    #[arg(long, allow_hyphen_values = true)]
    z0: String,
    #[arg(long)]
    t_end: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BalanceKind {
    Entropy,
    FreeEnergy,
}

#[derive(Debug, Args)]
struct MasterArgs {
    /// Rate matrix CSV, `n x n`, diagonal ignored.
    #[arg(long)]
    rates: PathBuf,
    /// Probability vector for the balance; uniform by default.
    #[arg(long, allow_hyphen_values = true)]
    p: Option<String>,
    #[arg(long, value_enum, default_value_t = BalanceKind::FreeEnergy)]
    balance: BalanceKind,
    /// Evolve `p` for this long and report the relative-entropy trend.
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Ledger CSV.
    #[arg(long)]
    out: PathBuf,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LDPKIT_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| parse::usage(format!("LDPKIT_THREADS={v:?} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| parse::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| commands::run(&cli));
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(parse::exit_code(&e))
        }
    }
}
