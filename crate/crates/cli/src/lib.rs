//! Command-line experiment runner: one subcommand per family of claims.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod report;

pub use report::Report;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "SPARSE_HW_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("{0}")]
    Run(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<sparse_hw::Error> for CliError {
    fn from(e: sparse_hw::Error) -> Self {
        use sparse_hw::Error as E;
        match e {
            E::BudgetExceeded(m) => CliError::Budget(m),
            E::InvalidParameter(_)
            | E::DimensionMismatch(_)
            | E::ZeroMatrixOnSupport
            | E::NonzeroDiagonal(_)
            | E::ZeroRetention(_)
            | E::Parse(_)
            | E::Io(_) => CliError::Config(e.to_string()),
            E::BracketExpansion(_) | E::InsufficientData(_) | E::Numerical(_) => CliError::Run(e.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Run(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Budget(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sparse-hw", version, about = "Sparse Hanson-Wright bounds: evaluation and Monte Carlo verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: $SPARSE_HW_THREADS, then all logical cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Directory for report.json and CSV sidecars; without it the report goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Empirical tail of a sparse quadratic form against the sparse bounds.
    HwVerify(Common),
    /// Empirical tail of a sparse linear form against the sparse Bernstein bound.
    BernsteinVerify(Common),
    /// IPW covariance estimation under missing observations.
    Covest(Common),
    /// Restricted isometry of the IPW estimator and its high-probability bound.
    Rip(Common),
    /// Low-rank approximation with sparsified sketches.
    Sketch(Common),
    /// Every implemented norm of a matrix.
    Norms(NormsArgs),
    /// Draw sparse random vectors or masked observations.
    Sample(Common),
    /// Every bound family on a threshold grid.
    BoundTable(Common),
}

#[derive(Debug, Clone, Args)]
pub struct NormsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Matrix file (CSV or binary); alternative to --config.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Retention probability for the sparse functionals.
    #[arg(long)]
    pub p: Option<f64>,
    /// Tail exponent for the α-dependent operator norms.
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::HwVerify(c)
            | Command::BernsteinVerify(c)
            | Command::Covest(c)
            | Command::Rip(c)
            | Command::Sketch(c)
            | Command::Sample(c)
            | Command::BoundTable(c) => c,
            Command::Norms(n) => &n.common,
        }
    }
}

/// Resolves the worker count: flag, then environment, then all cores (0).
pub fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Config(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(0),
    }
}

/// Runs one command inside a pool of the requested size.
pub fn run(cli: Cli) -> Result<Report, CliError> {
    let threads = thread_count(cli.command.common().threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Run(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::HwVerify(c) => commands::quadform::hw_verify(c),
        Command::BernsteinVerify(c) => commands::quadform::bernstein_verify(c),
        Command::BoundTable(c) => commands::quadform::bound_table(c),
        Command::Covest(c) => commands::covariance::covest(c),
        Command::Rip(c) => commands::covariance::rip(c),
        Command::Sketch(c) => commands::sketch::sketch(c),
        Command::Norms(n) => commands::norms::norms(n),
        Command::Sample(c) => commands::sample::sample(c),
    })
}
