mod commands;
mod gradcheck;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::gradcheck::Block;

/// Brain-tumor segmentation: preprocessing, synthetic data, training and inference.
#[derive(Debug, Parser)]
#[command(name = "tumorseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert images to grayscale and equalize their histograms.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only convert to grayscale.
        #[arg(long)]
        no_equalize: bool,
    },
    /// Write a synthetic image/mask dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Depth of the network the images are meant for.
        #[arg(long, default_value_t = 4)]
        depth: usize,
    },
    /// Train a network on a directory of image/mask pairs.
    Train(TrainArgs),
    /// Report mIoU and loss of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write the binary mask predicted for one image.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Block::All)]
        block: Block,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.0002)]
    lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Coordinate attention on skips and ASPP at the bottleneck (default).
    #[arg(long, conflicts_with = "baseline")]
    improved: bool,
    /// Plain U-Net.
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value_t = 32)]
    base_channels: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [6, 12, 18])]
    aspp_rates: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    reduction: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultArg {
    Relu,
    Sigmoid,
    ConvWeight,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess { input, out, no_equalize } => commands::preprocess(&input, &out, !no_equalize),
        Command::Synth { n, side, seed, out, depth } => commands::synth(n, side, seed, &out, depth),
        Command::Train(args) => commands::train(args),
        Command::Eval { ckpt, data } => commands::eval(&ckpt, &data),
        Command::Predict { ckpt, input, out } => commands::predict(&ckpt, &input, &out),
        Command::Gradcheck { block, inject_fault } => commands::gradcheck(block, inject_fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
