//! `searecon`: train a diffusion prior on synthetic layered temperature
//! fields, reconstruct full fields from sparse observations by guiding
//! the reverse process, and evaluate/ablate the results.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use io::AppError;

#[derive(Parser)]
#[command(name = "searecon", version, about = "Guided-diffusion reconstruction of layered sea-temperature fields")]
struct Cli {
    /// Master seed for all stochastic stages.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Config file in `section.key = value` form.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic field corpus (plus optional observation files).
    GenerateData {
        /// Synthetic family config; falls back to --config.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of fields to generate (months cycle 1..=12).
        #[arg(long)]
        months: usize,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also emit obs_NNNN/mask_NNNN files at this guided rate.
        #[arg(long)]
        obs_rate: Option<f64>,
    },
    /// Pre-train the unconditional diffusion denoiser.
    Train {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the direct-regression U-Net baseline.
    TrainBaseline {
        #[arg(long)]
        out: PathBuf,
    },
    /// Observation-guided reverse diffusion from a checkpoint.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Physical-unit observed values (zeros off-mask).
        #[arg(long)]
        obs: PathBuf,
        /// 0/1 mask field marking observed cells.
        #[arg(long)]
        mask: PathBuf,
        /// Guidance strength.
        #[arg(long = "s", default_value_t = 4.0)]
        s: f64,
        #[arg(long, default_value = "zero")]
        sigma_mode: String,
        /// Soft-extension kernel size (odd, 0 disables).
        #[arg(long, default_value_t = 5)]
        kernel: usize,
        /// Kernel sigma; defaults to kernel/4.
        #[arg(long)]
        kernel_sigma: Option<f64>,
        #[arg(long, default_value = "squared")]
        distance: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// MSE report of a reconstruction against ground truth.
    Evaluate {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 10)]
        upper_levels: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Base path for truth/recon/diff heatmaps and a raw CSV dump.
        #[arg(long)]
        heatmap: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        heatmap_layer: usize,
    },
    /// Cartesian sweep over guidance hyperparameters, CSV out.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unconditional sample from a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn require_config(cli: &Cli) -> Result<&PathBuf, AppError> {
    cli.config
        .as_ref()
        .ok_or_else(|| AppError::Config("this subcommand needs --config <file>".into()))
}

fn run(cli: &Cli) -> Result<(), AppError> {
    match &cli.command {
        Command::GenerateData { spec, months, out_dir, obs_rate } => {
            let spec_path = spec.as_ref().or(cli.config.as_ref()).ok_or_else(|| {
                AppError::Config("generate-data needs --spec <file> (or --config)".into())
            })?;
            commands::generate_data(spec_path, *months, out_dir, *obs_rate, cli.seed)
        }
        Command::Train { out } => commands::train(require_config(cli)?, out, cli.seed, false),
        Command::TrainBaseline { out } => commands::train(require_config(cli)?, out, cli.seed, true),
        Command::Reconstruct { checkpoint, obs, mask, s, sigma_mode, kernel, kernel_sigma, distance, out } => {
            commands::reconstruct(checkpoint, obs, mask, *s, sigma_mode, *kernel, *kernel_sigma, distance, out, cli.seed)
        }
        Command::Evaluate { recon, truth, mask, upper_levels, csv, heatmap, heatmap_layer } => {
            commands::evaluate(recon, truth, mask, *upper_levels, csv.as_deref(), heatmap.as_deref(), *heatmap_layer)
        }
        Command::Ablate { checkpoint, truth, out } => {
            commands::ablate(require_config(cli)?, checkpoint, truth, out, cli.seed)
        }
        Command::Sample { checkpoint, out } => commands::sample(checkpoint, out, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
