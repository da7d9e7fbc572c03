use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use east::cli;

#[derive(Parser)]
#[command(name = "east", version, about = "Encoding-aware sparse training toolkit")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model under a memory budget
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Prune, quantize and encode a float checkpoint to fit a budget
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "target-bytes")]
        target_bytes: usize,
        /// CIFAR-10 test records used to report accuracy
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-1 accuracy of a container
    Eval {
        #[arg(long)]
        container: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the per-layer inference report of one image as CSV
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Dump container header and per-layer statistics
    Inspect {
        #[arg(long)]
        container: PathBuf,
    },
    /// EAST against weight pruning over several budgets
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_name = "N1,N2,...")]
        targets: String,
    },
}

fn run(args: Args) -> east::Result<String> {
    match args.command {
        Command::Train { config } => cli::cmd_train(&cli::RunConfig::load(&config)?),
        Command::Compress {
            model,
            target_bytes,
            data,
            out,
        } => cli::cmd_compress(&model, target_bytes, data.as_deref(), out.as_deref()),
        Command::Eval {
            container,
            data,
            report,
        } => cli::cmd_eval(&container, &data, report.as_deref()),
        Command::Inspect { container } => cli::cmd_inspect(&container),
        Command::Sweep { config, targets } => {
            cli::cmd_sweep(&cli::RunConfig::load(&config)?, &cli::parse_targets(&targets)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("east: {e}");
            ExitCode::FAILURE
        }
    }
}
