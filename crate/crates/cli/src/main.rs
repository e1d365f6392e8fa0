use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod error;
mod run_file;

use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "bayesmem",
    version,
    about = "Continual learning with per-class feature densities"
)]
struct Cli {
    /// Cap on worker threads (results do not depend on it).
    #[arg(long, global = true, env = "BAYESMEM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorKind {
    Gmm,
    Kde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Prior {
    Counts,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Pick by file extension (`.csv` is CSV, anything else binary).
    Auto,
    Binary,
    Csv,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Feature shard (binary FVS1 or CSV).
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Auto)]
    pub format: Format,
    #[arg(long, value_enum, default_value_t = EstimatorKind::Gmm)]
    pub estimator: EstimatorKind,
    /// Mixture components per feature (gmm).
    #[arg(long, default_value_t = bayesmem::memory::DEFAULT_COMPONENTS)]
    pub components: usize,
    /// Fixed kernel bandwidth (kde); Silverman's rule when omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtendArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Auto)]
    pub format: Format,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Auto)]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
    /// Append one posterior column per class.
    #[arg(long)]
    pub posteriors: bool,
    #[arg(long, value_enum, default_value_t = Prior::Counts)]
    pub prior: Prior,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// JSON run file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Record wall-clock durations in the report and write timings.csv.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 50)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Binary)]
    pub format: Format,
    /// Directory receiving train and test shards.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// Print every stored parameter, not just the summary.
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a new memory bank from a labeled shard.
    Fit(FitArgs),
    /// Add the shard's classes (all new) to an existing bank.
    Learn(ExtendArgs),
    /// Fold new samples of existing classes into a bank.
    Update(ExtendArgs),
    /// Classify a shard and write predictions as CSV.
    Predict(PredictArgs),
    /// Run a continual-learning protocol described by a run file.
    Protocol(ProtocolArgs),
    /// Write a synthetic train/test shard pair.
    Synth(SynthArgs),
    /// Print a bank's classes, counts and footprint as JSON.
    Inspect(InspectArgs),
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    match threads {
        None => Ok(()),
        Some(0) => Err(CliError::Validation("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}"))),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Learn(args) => commands::learn(&args),
        Command::Update(args) => commands::update(&args),
        Command::Predict(args) => commands::predict(&args),
        Command::Protocol(args) => commands::protocol(&args),
        Command::Synth(args) => commands::synth(&args),
        Command::Inspect(args) => commands::inspect(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
