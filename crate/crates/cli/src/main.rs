//! `tailscope` command-line frontend.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or parse error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tailscope::eval::RankMetric;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] tailscope::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_user_error() => 2,
            CliError::Core(_) | CliError::Internal(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tailscope", version, about = "Trajectory tailness analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fourteen tailness metrics per scene from a scene CSV.
    Metrics(CommonArgs),
    /// Tail Index ranking of scenes (scene CSV or metrics JSON input).
    Rank(RankArgs),
    /// Forecast evaluation report from a JSON Lines forecast file.
    Eval(EvalArgs),
    /// Synthetic scenes from a scenario spec JSON, plus an oracle sidecar.
    Synth(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Input file; repeat for several.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long, env = config::CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for scene-level parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Perceiver weights JSON.
    #[arg(long)]
    pub perceiver: Option<PathBuf>,
    /// Intrinsic metric (e.g. C_v) driving a monotone single-feature perceiver.
    #[arg(long)]
    pub probe: Option<String>,
    /// Number of Tail Index categories to assign.
    #[arg(long)]
    pub categories: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Mode budgets, e.g. `1,5`.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Miss-rate threshold in metres.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Worst-case percentages, e.g. `1,2,3,4,5`.
    #[arg(long, value_delimiter = ',')]
    pub topk: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_rank_metric)]
    pub rank_metric: Option<RankMetric>,
    /// Mode budget used for worst-case ranking; the largest k by default.
    #[arg(long)]
    pub rank_k: Option<usize>,
}

fn parse_rank_metric(s: &str) -> Result<RankMetric, String> {
    s.parse().map_err(|e: tailscope::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Metrics(args) => commands::metrics(&args),
        Command::Rank(args) => commands::rank(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Synth(args) => commands::synth(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tailscope: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
