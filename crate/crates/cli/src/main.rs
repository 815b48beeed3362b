//! Command-line driver: generate the synthetic benchmark, train the scorer,
//! evaluate it, verify gradients, and demonstrate NIG fusion.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::CmdResult;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "evifuse",
    about = "Evidential multitask fusion on a synthetic quality benchmark",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset CSV.
    Datagen {
        /// Run configuration (key=value lines).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a scorer on an existing dataset; writes model.txt and
    /// history.csv.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset CSV (defaults to <out_dir>/dataset.csv).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a trained model on a dataset; writes metrics.txt.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Corrupt one analytic gradient entry; the check must then fail.
        #[arg(long)]
        inject_corruption: bool,
    },
    /// Fuse NIG parameter tuples and print the trace with uncertainties.
    Fusedemo {
        /// NIG tuple 'delta,v,alpha,beta'; repeat to fuse several.
        #[arg(long = "nig", required = true)]
        nig: Vec<String>,
        /// Coverage of the reported predictive interval.
        #[arg(long, default_value_t = 0.95)]
        coverage: f64,
    },
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Datagen { config, seed, out } => {
            commands::cmd_datagen(config.as_deref(), seed, out.as_deref())
        }
        Command::Train {
            config,
            seed,
            out,
            dataset,
        } => commands::cmd_train(config.as_deref(), seed, out.as_deref(), dataset.as_deref()),
        Command::Eval {
            model,
            dataset,
            config,
            out,
        } => commands::cmd_eval(&model, &dataset, config.as_deref(), out.as_deref()),
        Command::Gradcheck {
            seed,
            inject_corruption,
        } => commands::cmd_gradcheck(seed, inject_corruption),
        Command::Fusedemo { nig, coverage } => commands::cmd_fusedemo(&nig, coverage),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {}", err.message());
        std::process::exit(err.exit_code());
    }
}
