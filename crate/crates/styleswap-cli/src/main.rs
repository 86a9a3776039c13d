//! Command-line surface for the style-swap pipeline.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure
//! (non-finite loss abort).

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "styleswap",
    version,
    about = "Patch-based artistic style transfer: swap, optimize, train, invert"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Encoder selection shared by every command.
#[derive(Args, Clone)]
struct EncoderOpts {
    /// Feature encoder: identity | tiny | vgg | file:PATH
    #[arg(long, default_value = "tiny")]
    encoder: String,

    /// Channel count of the tiny encoder
    #[arg(long, default_value_t = 8)]
    tiny_channels: usize,

    /// Seed for randomly initialized encoders (tiny, vgg)
    #[arg(long, default_value_t = 0)]
    encoder_seed: u64,
}

#[derive(Args, Clone)]
struct SwapOpts {
    /// Patch size in activation cells
    #[arg(long, default_value_t = 3)]
    patch_size: usize,

    /// Patch grid stride
    #[arg(long, default_value_t = 1)]
    stride: usize,

    /// Average all tied best matches instead of taking the lowest index
    #[arg(long)]
    average_ties: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Style swap in activation space, decoded naively (identity encoder)
    Swap {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        encoder: EncoderOpts,
        #[command(flatten)]
        swap: SwapOpts,
    },

    /// Optimization-based stylization (gradient descent on the image)
    Stylize {
        #[arg(long, conflicts_with = "frames")]
        content: Option<PathBuf>,
        /// Directory of frames to stylize in a batch (out becomes a directory)
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        encoder: EncoderOpts,
        #[command(flatten)]
        swap: SwapOpts,
        #[arg(long, default_value_t = 1e-6)]
        tv_weight: f64,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        /// Adam step size
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        /// Starting image: content | random
        #[arg(long, default_value = "content")]
        init: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the per-iteration loss series to this CSV
        #[arg(long)]
        report: Option<PathBuf>,
    },

    /// Train an inverse network on natural and painting image folders
    TrainInverse {
        #[arg(long)]
        natural: PathBuf,
        #[arg(long)]
        paintings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        encoder: EncoderOpts,
        #[command(flatten)]
        swap: SwapOpts,
        #[arg(long, default_value_t = 2)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 1e-6)]
        tv_weight: f64,
        /// Images are resized to this square extent before encoding
        #[arg(long, default_value_t = 256)]
        image_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train without style-swapped batch augmentation (ablation)
        #[arg(long)]
        no_augment: bool,
        /// Save an intermediate checkpoint every N steps (0 = final only)
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        /// Natural images held out for validation
        #[arg(long, default_value_t = 0)]
        val_natural: usize,
        /// Paintings held out for validation
        #[arg(long, default_value_t = 0)]
        val_paintings: usize,
        /// Write per-step training losses to this CSV
        #[arg(long)]
        report: Option<PathBuf>,
        /// Continue from a checkpoint (weights only; the optimizer restarts)
        #[arg(long)]
        resume: Option<PathBuf>,
    },

    /// One-pass stylization through a trained inverse network
    Feedforward {
        #[arg(long, conflicts_with = "frames")]
        content: Option<PathBuf>,
        /// Directory of frames to stylize in a batch (out becomes a directory)
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        style: PathBuf,
        /// Inverse-network checkpoint
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        encoder: EncoderOpts,
        #[command(flatten)]
        swap: SwapOpts,
    },

    /// Time the pipeline phases over a size sweep and write a CSV
    Bench {
        /// style-size | content-size | matcher
        #[arg(long)]
        mode: String,
        /// Comma-separated square image extents, e.g. 32,48,64
        #[arg(long)]
        sizes: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        encoder: EncoderOpts,
        #[command(flatten)]
        swap: SwapOpts,
        /// Extent of the non-swept image
        #[arg(long, default_value_t = 64)]
        fixed_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(styleswap::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<styleswap::Error> for CliError {
    fn from(e: styleswap::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) => {
                if e.is_numerical() {
                    3
                } else {
                    2
                }
            }
        }
    }
}

fn main() {
    let code = match Cli::try_parse() {
        Ok(cli) => match commands::run(cli.command) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Err(e) => {
            let is_usage = e.use_stderr();
            let _ = e.print();
            if is_usage {
                2
            } else {
                0
            }
        }
    };
    std::process::exit(code);
}
