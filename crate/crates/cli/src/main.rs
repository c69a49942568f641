//! `enet`: generate channels, analyze their correlation, train and evaluate
//! the autoencoder, count its parameters.

mod commands;
mod config;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "enet", version, about = "CSI feedback experiments with the ENet autoencoder")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Global {
    /// `key = value` settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, repeatable
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results are reproducible for a fixed count
    #[arg(long, global = true, env = "ENET_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize spatial-frequency channels into <out>/<name>.json and .bin
    Generate {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value = "dataset")]
        name: String,
    },
    /// Correlation profiles and the real/imaginary equality check
    Analyze {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Transform, split, train on real planes, evaluate on both parts
    Train {
        /// Generate `samples` channels in memory when omitted
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Compression ratio, e.g. 1/4
        #[arg(long, value_parser = config::parse_fraction)]
        gamma: Option<f64>,
        #[arg(long)]
        f: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// NMSE of a checkpoint on every sample of a dataset
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Trainable parameters per layer and in total
    CountParams {
        #[arg(long)]
        f: Option<usize>,
        #[arg(long, value_parser = config::parse_fraction)]
        gamma: Option<f64>,
        #[arg(long = "n-cc")]
        n_cc: Option<usize>,
        #[arg(long = "n-t")]
        n_t: Option<usize>,
        /// Totals for f in {16, 32} and gamma in {1/4, 1/16, 1/32, 1/64}
        #[arg(long)]
        table: bool,
    },
    /// Magnitude heatmaps (PGM) and CSV of one sample and its reconstruction
    Visualize {
        /// Without a checkpoint the reconstruction is the original
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Finite-difference checks of every layer and a small full model
    GradCheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// List the settings accepted by --config and --set
    Keys,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli.global, cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
