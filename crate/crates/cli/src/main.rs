//! `whitebox` command-line front end.
//!
//! Every subcommand reads and writes artifacts in a run directory, so the
//! pipeline can be run in one go or phase by phase:
//!
//! ```text
//! whitebox pipeline --config configs/toy.conf --out runs/a
//! whitebox train-mask --config configs/toy.conf --out runs/b
//! whitebox vote --run runs/b
//! whitebox fold --run runs/b
//! whitebox finetune --run runs/b
//! ```
//!
//! Failures print one line to stderr and exit with 1 (configuration),
//! 2 (data or artifacts) or 3 (training).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "whitebox", version, about = "Class-wise mask channel pruning")]
struct Cli {
    /// Worker threads for batch parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

/// Configuration for commands that start a run.
#[derive(Debug, Args)]
struct NewRun {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
}

/// Configuration for commands that continue an existing run.
#[derive(Debug, Args)]
struct ExistingRun {
    /// Run directory written by an earlier phase.
    #[arg(long)]
    run: PathBuf,
    /// Override one saved configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Checkpoint {
    Pretrain,
    Mask,
    Pruned,
    Finetune,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every phase and write all artifacts.
    Pipeline(NewRun),
    /// Pretrain (if configured) and train the class-wise masks.
    TrainMask(NewRun),
    /// Score channels from the trained masks and vote a pruning plan.
    Vote(ExistingRun),
    /// Fold the masks into the weights and remove the planned channels.
    Fold(ExistingRun),
    /// Fine-tune the pruned model and write the run report.
    Finetune(ExistingRun),
    /// Top-1 test accuracy of a saved checkpoint.
    Eval {
        #[command(flatten)]
        run: ExistingRun,
        #[arg(long, value_enum, default_value_t = Checkpoint::Finetune)]
        checkpoint: Checkpoint,
    },
    /// Per-layer and total multiply-accumulate counts.
    Flops {
        /// Bundled name (`toy4`, `resnet50`) or path to a description file.
        arch: String,
        /// Count the network as pruned by this plan.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        csv: bool,
    },
    /// Export mask heatmaps, per-layer pruning rates and the summary line.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        eprintln!("error kind=config code=1 phase=none msg=\"thread pool: {e}\"");
        return ExitCode::from(1);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = commands::exit_code(&e);
            eprintln!("{}", commands::error_line(&e, code));
            ExitCode::from(code)
        }
    }
}
