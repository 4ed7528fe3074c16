use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;
mod json;

#[derive(Debug, Parser)]
#[command(
    name = "wass-ensemble",
    version,
    about = "Ensemble model predictions with Wasserstein barycenters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Combine model histograms with a mean or a barycenter.
    Ensemble(EnsembleArgs),
    /// Check the accuracy, diversity and entropy bounds of an ensemble result.
    Diagnose(DiagnoseArgs),
    /// Exact barycenter and transport costs on two-bin supports.
    Oracle(OracleArgs),
    /// Time the balanced barycenter on random instances.
    Bench(BenchArgs),
    /// Shuffle model masses within the clusters of a kernel.
    Shuffle(ShuffleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Balanced,
    Unbalanced,
    Arithmetic,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Auto,
    Scaling,
    Log,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Entropic regularization (required by the barycenter modes).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Weight of the marginal penalty of the unbalanced barycenter.
    #[arg(long, default_value_t = 1.0)]
    pub kl_lambda: f64,
    #[arg(long, default_value_t = 5)]
    pub max_iter: usize,
    /// Stop once the barycenter moves by at most this much (l1) in a sweep.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = DomainArg::Auto)]
    pub domain: DomainArg,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// `uniform`, a comma list, or `perf:<file>` with one score per model.
    #[arg(long, default_value = "uniform")]
    pub weights: String,
    /// Build a per-input diagonal kernel from each model's top-N categories.
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Diagonal value of categories outside every model's top-N.
    #[arg(long, default_value_t = 1e-3)]
    pub zeta: f64,
    /// Model files, comma separated; each is ensembled independently.
    #[arg(long, value_delimiter = ',', required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include couplings, attributions and coupling entropy checks.
    #[arg(long)]
    pub emit_couplings: bool,
    /// Worker threads for batches of inputs.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Model file the result was computed from.
    #[arg(long)]
    pub inputs: PathBuf,
    /// JSON written by `ensemble`.
    #[arg(long)]
    pub result: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Single-row histogram file used as the reference distribution.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Regularization of the Sinkhorn distances (supports with more than two bins).
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value = "uniform")]
    pub weights: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Two-bin model file.
    #[arg(long)]
    pub inputs: PathBuf,
    /// `#cost` file with a 2x2 matrix.
    #[arg(long)]
    pub kernel: PathBuf,
    #[arg(long, default_value = "uniform")]
    pub weights: String,
    /// Single-row histogram to measure the barycenter against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 8)]
    pub models: usize,
    #[arg(long, default_value_t = 80)]
    pub bins: usize,
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 5)]
    pub max_iter: usize,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShuffleArgs {
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub kernel: PathBuf,
    /// Needed only for `#cost` kernel files.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cluster threshold relative to the largest off-diagonal kernel entry.
    #[arg(long, default_value_t = wass_ensemble::pipelines::SHUFFLE_THRESHOLD)]
    pub threshold: f64,
    /// Output model file (CSV); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Parse { path: PathBuf, message: String },
    Solver(wass_ensemble::Error),
}

impl CliError {
    pub fn parse(path: &Path, message: impl fmt::Display) -> Self {
        CliError::Parse {
            path: path.to_owned(),
            message: message.to_string(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Config(format!("{}: {err}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Parse { .. } => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Parse { path, message } => {
                write!(f, "cannot parse {}: {message}", path.display())
            }
            CliError::Solver(e) => write!(f, "{}: {e}", e.name()),
        }
    }
}

impl From<wass_ensemble::Error> for CliError {
    fn from(e: wass_ensemble::Error) -> Self {
        CliError::Solver(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Ensemble(a) => commands::ensemble(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Shuffle(a) => commands::shuffle(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
