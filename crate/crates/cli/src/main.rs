mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nidsmoe::data::ImputationProtocol;
use nidsmoe::train::parse_expert_grid;

use config::{Overrides, RunConfig};
use error::CliError;

/// Flow-based intrusion detection with a CNN and a sparse mixture of experts.
///
/// Settings come from built-in defaults, then `--config`, then flags (flags
/// win). Log verbosity is read from NIDSMOE_LOG (error, warn, info, debug).
#[derive(Parser, Debug)]
#[command(name = "nidsmoe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Flow CSV, or `synthetic[:N]` for Gaussian blobs.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Seed for initialization, shuffling, noise and the split
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum training epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Mini-batch size
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Weight of the balancing losses.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Number of experts.
    #[arg(long, global = true)]
    experts: Option<usize>,
    /// Experts kept per sample.
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// zero_losses, no_moe, no_cnn (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    ablate: Option<Vec<String>>,
    /// (n,k) pairs such as `128x32,64x16`; `default` for the standard sweep.
    #[arg(long, global = true)]
    expert_grid: Option<String>,
    /// `leak-free` (default) or `verbatim`
    #[arg(long, global = true)]
    imputation: Option<ImputationProtocol>,
    /// Output root for run directories and the dataset cache.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, impute, scale and encode a flow CSV; write the cache and statistics.
    Preprocess,
    /// Train a model and write checkpoint, history and test report.
    Train,
    /// Evaluate a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train the ablation variants and the expert grid; report each.
    Ablate,
    /// Per-expert utilization of a checkpoint on a dataset.
    GatingReport {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn overrides(c: &Common) -> Result<Overrides, CliError> {
    let expert_grid = match c.expert_grid.as_deref() {
        None => None,
        Some("default") => Some(nidsmoe::train::EXPERT_GRID.to_vec()),
        Some(s) => Some(parse_expert_grid(s).map_err(CliError::from)?),
    };
    Ok(Overrides {
        dataset: c.dataset.clone(),
        seed: c.seed,
        epochs: c.epochs,
        batch_size: c.batch_size,
        alpha: c.alpha,
        experts: c.experts,
        top_k: c.top_k,
        ablate: c.ablate.clone(),
        expert_grid,
        imputation: c.imputation,
        out: c.out.clone(),
    })
}

fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let cfg = RunConfig::load(cli.common.config.as_deref(), &overrides(&cli.common)?)?;
    match &cli.command {
        Command::Preprocess => commands::preprocess(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Evaluate { checkpoint } => commands::evaluate_cmd(&cfg, checkpoint),
        Command::Ablate => commands::ablate_cmd(&cfg),
        Command::GatingReport { checkpoint } => commands::gating_report_cmd(&cfg, checkpoint),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NIDSMOE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(dir) => {
            println!("run directory: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
