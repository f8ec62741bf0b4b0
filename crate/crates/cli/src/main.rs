//! `gns`: generate data, select training trajectories, train, evaluate and
//! render reports.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gns_core::GnsError;

/// Exit status for usage and configuration mistakes (also used by clap).
const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "gns", version, about = "Graph neural simulator pipeline")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true, env = "GNS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Configuration shared by every subcommand.
#[derive(Args, Clone, Debug)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Case to run with standard defaults (burgers_scalar, burgers_coupled, allen_cahn, swe).
    #[arg(long)]
    case: Option<String>,
    /// Override a configuration value, e.g. `--set train.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replace existing output files.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the PDE for every sampled initial condition and write a dataset.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick representative training trajectories with PCA and k-means.
    Select {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the simulator on the selected trajectories.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from this checkpoint instead of starting afresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Roll out the trained model on test trajectories and score it.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG figures from evaluation CSVs.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory holding the evaluation CSVs.
        #[arg(long)]
        eval_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<GnsError>() {
        Some(g) if g.is_divergence() => EXIT_DIVERGENCE,
        Some(g) if g.is_config() => EXIT_USAGE,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Generate { cfg, out } => commands::generate(&cfg, out),
        Command::Select { cfg, dataset, out } => commands::select(&cfg, dataset, out),
        Command::Train {
            cfg,
            dataset,
            selection,
            out,
            resume,
        } => commands::train(&cfg, dataset, selection, out, resume),
        Command::Evaluate {
            cfg,
            dataset,
            selection,
            checkpoint,
            out,
        } => commands::evaluate(&cfg, dataset, selection, checkpoint, out),
        Command::Report { cfg, eval_dir, out } => report::run(&cfg, eval_dir, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
