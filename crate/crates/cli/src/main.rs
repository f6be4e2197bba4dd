//! `cumprobit`: fit, predict, simulate, compare and benchmark cumulative probit models.
//!
//! Exit status: 0 on success, 1 on validation or fitting errors, 2 on I/O errors.

mod commands;
mod fitfile;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cumprobit::Error;

#[derive(Debug, Parser)]
#[command(name = "cumprobit", version, about = "Approximate Bayesian inference for cumulative probit regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one or all methods to a CSV dataset and write the fit as JSON.
    Fit(FitArgs),
    /// Predictive class probabilities for new rows from a saved fit.
    Predict(PredictArgs),
    /// Simulate a dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Compare fitted methods with the Gibbs oracle on one dataset.
    Compare(CompareArgs),
    /// Replicated simulation study: errors against the oracle, timing, or coverage.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mfvb,
    Pmf,
    Ep,
    All,
}

impl MethodArg {
    pub fn methods(self) -> Vec<cumprobit::ebayes::Method> {
        use cumprobit::ebayes::Method;
        match self {
            MethodArg::Mfvb => vec![Method::Mfvb],
            MethodArg::Pmf => vec![Method::Pmf],
            MethodArg::Ep => vec![Method::Ep],
            MethodArg::All => Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PriorArgs {
    /// Prior mean, one value for every coefficient.
    #[arg(long, default_value_t = 0.0)]
    pub prior_mean: f64,
    /// Prior variance, one value on the diagonal.
    #[arg(long, default_value_t = 2.0)]
    pub prior_var: f64,
    /// Full prior covariance as a headerless p x p CSV; overrides --prior-var.
    #[arg(long)]
    pub prior_cov: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ToleranceArgs {
    /// Convergence tolerance of the inner fitter.
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Iteration (sweep) cap of the inner fitter.
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// EP damping in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
    /// Cap on alternations between fitting and threshold search.
    #[arg(long, default_value_t = 50)]
    pub max_outer: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Ep)]
    pub method: MethodArg,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Estimate the cutpoints (the default unless --thresholds is given).
    #[arg(long, conflicts_with = "thresholds")]
    pub estimate_thresholds: bool,
    /// Fixed cutpoints: K - 1 increasing numbers in a CSV file.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Number of categories; defaults to the largest response.
    #[arg(long = "K", alias = "categories")]
    pub categories: Option<usize>,
    #[command(flatten)]
    pub tolerances: ToleranceArgs,
    /// Record wall-clock seconds in the output (makes it non-reproducible).
    #[arg(long)]
    pub record_time: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Fit JSON written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// CSV with the same covariate columns as the training data; a `y` column is ignored.
    #[arg(long)]
    pub data: PathBuf,
    /// Which record to use when the fit file holds several methods.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Monte Carlo draws for PMF fits.
    #[arg(long, default_value_t = cumprobit::predict::DEFAULT_PMF_DRAWS)]
    pub draws: usize,
    #[arg(long, env = "CUMPROBIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: usize,
    #[arg(long = "K", alias = "categories", default_value_t = 5)]
    pub categories: usize,
    #[arg(long, env = "CUMPROBIT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Proportions of zero, +1 and -1 coefficients.
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.4, 0.4])]
    pub pattern: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the generating coefficients and cutpoints as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// Retained Gibbs draws.
    #[arg(long, default_value_t = 5000)]
    pub oracle_iterations: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    pub method: MethodArg,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Fixed cutpoints; otherwise they are estimated with EP and shared by every method and the oracle.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long = "K", alias = "categories")]
    pub categories: Option<usize>,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    pub tolerances: ToleranceArgs,
    #[arg(long, env = "CUMPROBIT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Per-method, per-coefficient comparison table (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Export the oracle draws as CSV.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 2.0)]
    pub prior_var: f64,
    /// Run the Wald-interval coverage study instead of the oracle comparison.
    #[arg(long)]
    pub coverage: bool,
    /// Nominal coverage levels in percent.
    #[arg(long, value_delimiter = ',', default_values_t = [80.0, 90.0, 95.0])]
    pub levels: Vec<f64>,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    pub tolerances: ToleranceArgs,
    /// Worker threads for replications (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Replications allowed to fail before the run is declared failed.
    #[arg(long, default_value_t = 0)]
    pub failure_budget: usize,
    /// Result table (CSV); timings are written separately.
    #[arg(long)]
    pub out: PathBuf,
    /// The same results as JSON, one row per replication, method and metric.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Wall-clock seconds per replication and method (CSV).
    #[arg(long)]
    pub timing_out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Benchmark(a) => commands::benchmark(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
