//! `ivgf`: forward inference, gradient checking, augmentation preview, toy
//! training and (missing-modality) evaluation.
//!
//! Exit codes: 0 success, 1 gradient check violation, 2 config or argument
//! error, 3 I/O or format error, 4 shape error, 5 non-finite value.

mod commands;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ivgf_core::backbone::Missing;
use ivgf_core::pipeline::Split;
use ivgf_core::{Error, OpKind};

#[derive(Parser)]
#[command(name = "ivgf", version, about = "Infrared/visible fusion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// `key = value` config file; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one infrared/visible pair.
    Forward {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        vis: PathBuf,
        /// Checkpoint; without one, parameters are initialized from the seed.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write the max-projected ir/vis/fused features of every scale.
        #[arg(long)]
        dump_features: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare backward against central finite differences for every block.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<OpKind>,
    },
    /// Train on the synthetic task (or a dataset directory).
    TrainToy {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint path; the loss curve and metadata are written beside it.
        #[arg(long)]
        out_ckpt: PathBuf,
        /// Dataset directory as written by `synth`; default: generated from the seed.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write an mIoU report.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory; default: the synthetic eval split of the seed.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "none")]
        missing: Missing,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic dataset split as PNM files.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Apply cutout&mix to one pair and write the result.
    Augment {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        vis: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ConfigLine { .. } | Error::Invalid(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Dimension { .. } => 4,
        Error::NonFinite(_) => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Forward { config, ir, vis, ckpt, out_dir, dump_features, seed } => {
            commands::forward(config.config.as_deref(), &ir, &vis, ckpt.as_deref(), &out_dir, dump_features, seed)
        }
        Command::Gradcheck { seed, trials, inject_fault } => commands::gradcheck(seed, trials as usize, inject_fault),
        Command::TrainToy { config, steps, seed, out_ckpt, data } => {
            commands::train_toy(config.config.as_deref(), steps, seed, &out_ckpt, data.as_deref())
        }
        Command::Eval { config, ckpt, data, missing, out_dir, seed } => {
            commands::eval(config.config.as_deref(), &ckpt, data.as_deref(), missing, &out_dir, seed)
        }
        Command::Synth { config, split, count, seed, out_dir } => {
            commands::synth(config.config.as_deref(), split, count, seed, &out_dir)
        }
        Command::Augment { config, ir, vis, seed, out_dir } => {
            commands::augment(config.config.as_deref(), &ir, &vis, seed, &out_dir)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
