//! The `msplit` command-line interface.
//!
//! [`run`] parses arguments, executes one command and returns the process
//! exit code: 0 on success, 1 for usage or input errors, 2 for numerical
//! failures and 3 when a verification check fails.

mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msplit::embedding::EmbeddingMethod;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MSPLIT_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] msplit::Error),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFY,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Regularization paths, baselines, bias checks and embeddings with
/// Multiple Split LBI.
#[derive(Debug, Parser)]
#[command(name = "msplit", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare estimators on correlated Gaussian designs (relative-error table).
    Simulate(SimulateArgs),
    /// Fit an MSplit LBI path to user matrices.
    Path(PathArgs),
    /// Monte-Carlo checks of the ridge, elastic-net and MSplit LBI biases.
    Verify(VerifyArgs),
    /// Few-shot and zero-shot embedding pipelines.
    #[command(subcommand)]
    Embed(EmbedCommand),
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Design correlation levels, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.4, 0.6, 0.8])]
    pub sigma: Vec<f64>,
    /// Simulated data sets per correlation level.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Base seed; trial i uses seed + 2i for the design and seed + 2i + 1 for the noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of samples.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Number of features.
    #[arg(long, default_value_t = 80)]
    pub d: usize,
    /// MSplit LBI damping factor.
    #[arg(long, default_value_t = 5.0)]
    pub kappa: f64,
    /// Split strength for every sigma (default: 3, 5, 7, 10 for sigma 0.2, 0.4, 0.6, 0.8).
    #[arg(long)]
    pub nu: Option<f64>,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    pub noise_sd: f64,
    /// Largest penalty of the ridge, lasso and elastic-net grids.
    #[arg(long, default_value_t = 5.0)]
    pub lambda_max: f64,
    /// Points in each penalty grid.
    #[arg(long, default_value_t = 500)]
    pub grid_points: usize,
    /// Elastic-net mixture weights, equally spaced on [0, 1].
    #[arg(long, default_value_t = 21)]
    pub mixtures: usize,
    /// Also report MSplit LBI errors at the t chosen by this many CV folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Also write the error-versus-t curve of the first trial at each sigma.
    #[arg(long)]
    pub curve: bool,
    /// Output directory.
    #[arg(long, default_value = "msplit-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PathArgs {
    /// Design matrix (CSV, or JSON with a .json extension).
    #[arg(long)]
    pub x_file: PathBuf,
    /// Response matrix, same formats.
    #[arg(long)]
    pub e_file: PathBuf,
    /// Damping factor.
    #[arg(long, default_value_t = 5.0)]
    pub kappa: f64,
    /// Split strength.
    #[arg(long, default_value_t = 3.0)]
    pub nu: f64,
    /// Step size (default: the largest stable one).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Path horizon (default: 50 times the time of the first activation).
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Iterations between recorded points (default: about 500 points).
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Decompose the estimate at this t.
    #[arg(long)]
    pub t: Option<f64>,
    /// Weak/noise threshold of the decomposition (default: robust noise estimate).
    #[arg(long)]
    pub decompose_tau: Option<f64>,
    /// Also write the dense path as JSON.
    #[arg(long)]
    pub json: bool,
    /// Output directory.
    #[arg(long, default_value = "msplit-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum LemmaChoice {
    #[value(name = "1")]
    #[serde(rename = "1")]
    One,
    #[value(name = "2")]
    #[serde(rename = "2")]
    Two,
    #[value(name = "all")]
    #[serde(rename = "all")]
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Which check to run.
    #[arg(long, value_enum, default_value_t = LemmaChoice::All)]
    pub lemma: LemmaChoice,
    /// Monte-Carlo draws, at least 1000 (default: 10000 for lemma 1, 1000 for lemma 2).
    #[arg(long)]
    pub draws: Option<usize>,
    /// Elastic-net l1 penalty (lemma 1).
    #[arg(long, default_value_t = 0.5)]
    pub lambda1: f64,
    /// Ridge and elastic-net l2 penalty (lemma 1).
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    /// Noise standard deviation (default: 0.7071 for lemma 1, 0.25 for lemma 2).
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Split strength (lemma 2).
    #[arg(long, default_value_t = 3.0)]
    pub nu: f64,
    /// Damping factor (lemma 2).
    #[arg(long, default_value_t = 100.0)]
    pub kappa: f64,
    /// Seed of the noise draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "msplit-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EmbedCommand {
    /// One-hot regression with argmax prediction.
    Fsl(FslArgs),
    /// Structure transfer with synthesized prototypes and nearest-prototype prediction.
    Zsl(ZslArgs),
}

fn parse_method(s: &str) -> Result<EmbeddingMethod, String> {
    s.parse().map_err(|e: msplit::Error| e.to_string())
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Estimator: msplit_dense, msplit_sparse, lasso or ridge (default: msplit_dense for fsl, msplit_sparse for zsl).
    #[arg(long, value_parser = parse_method)]
    pub method: Option<EmbeddingMethod>,
    /// Damping factor.
    #[arg(long, default_value_t = 5.0)]
    pub kappa: f64,
    /// Split strength.
    #[arg(long, default_value_t = 3.0)]
    pub nu: f64,
    /// Step size (default: the largest stable one).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Path horizon (default: 50 times the time of the first activation).
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Read the path at this t instead of cross-validating.
    #[arg(long)]
    pub t: Option<f64>,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Penalty for lasso and ridge.
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "msplit-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FslArgs {
    /// Training features, one sample per row.
    #[arg(long)]
    pub x_file: PathBuf,
    /// Training labels, one integer per line.
    #[arg(long)]
    pub labels_file: PathBuf,
    /// Held-out features (default: report training accuracy).
    #[arg(long, requires = "test_labels_file")]
    pub test_x_file: Option<PathBuf>,
    /// Held-out labels.
    #[arg(long, requires = "test_x_file")]
    pub test_labels_file: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ZslArgs {
    /// Source-class training features.
    #[arg(long)]
    pub source_x_file: PathBuf,
    /// Source-class labels.
    #[arg(long)]
    pub source_labels_file: PathBuf,
    /// Source semantic vectors, one class per row.
    #[arg(long)]
    pub source_semantic_file: PathBuf,
    /// Target semantic vectors, one class per row.
    #[arg(long)]
    pub target_semantic_file: PathBuf,
    /// Target-class samples to classify.
    #[arg(long)]
    pub target_x_file: Option<PathBuf>,
    /// Labels of the target samples, for accuracy.
    #[arg(long, requires = "target_x_file")]
    pub target_labels_file: Option<PathBuf>,
    /// Strong and weak signals listed per target class.
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn execute(cli: Cli, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let work = move || match cli.command {
        Command::Simulate(a) => commands::simulate(a, out),
        Command::Path(a) => commands::path(a, out),
        Command::Verify(a) => commands::verify(a, out),
        Command::Embed(EmbedCommand::Fsl(a)) => commands::fsl(a, out),
        Command::Embed(EmbedCommand::Zsl(a)) => commands::zsl(a, out),
    };
    match thread_cap()? {
        None => work(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?
            .install(work),
    }
}

/// Runs the CLI on `args` (including the program name), writing reports to
/// `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
