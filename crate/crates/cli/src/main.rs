//! `gazeclip` — train, evaluate and inspect text-guided gaze estimators.
//!
//! Exit codes: 0 success, 1 contract violation (bad arguments, malformed
//! inputs, shape mismatches), 2 I/O failure, 3 numerical failure.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use gazeclip::commands;
use gazeclip::error::{CliError, EXIT_CONTRACT};
use gazeclip_core::geometry::GazeAngles;
use std::path::PathBuf;
use std::process::exit;

#[derive(Parser)]
#[command(name = "gazeclip", version, about = "Text-guided 3D gaze estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one fold of an experiment described by a config file.
    Train {
        /// Experiment config file (`key = value` lines).
        #[arg(long)]
        config: PathBuf,
        /// Fold index within the protocol's split plan.
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Output directory (default: runs/<config-hash>-fold<i>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved checkpoint on one fold of a manifest.
    Evaluate {
        /// Checkpoint file produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest to evaluate on.
        #[arg(long)]
        manifest: PathBuf,
        /// Fold index within the checkpoint config's split plan.
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Explicit fold-assignment file for the 3-fold protocol.
        #[arg(long)]
        groups: Option<PathBuf>,
        /// Directory to write a metrics.json run record into.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation suite and print its comparison table.
    Ablate {
        /// Suite name: prompt_modes, freeze_grid, fusion_modes or backbones.
        #[arg(long)]
        suite: String,
        /// Base experiment config the suite varies one axis of.
        #[arg(long)]
        config: PathBuf,
        /// Fold index every cell trains and evaluates on.
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Directory to write <suite>.txt and <suite>.json into.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fill in missing direction labels on a manifest.
    AssignPrompts {
        /// Manifest whose unlabeled rows get a direction assigned.
        #[arg(long)]
        manifest: PathBuf,
        /// Config controlling the assigning model (backbone, seed).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the updated manifest here instead of in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict gaze for a single image file.
    Predict {
        /// Checkpoint file produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image to run the estimator on.
        #[arg(long)]
        image: PathBuf,
        /// Write a copy of the image with the gaze ray drawn on it.
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Ground-truth pitch in radians (drawn red on the overlay).
        #[arg(long, requires = "truth_yaw", allow_negative_numbers = true)]
        truth_pitch: Option<f64>,
        /// Ground-truth yaw in radians (drawn red on the overlay).
        #[arg(long, requires = "truth_pitch", allow_negative_numbers = true)]
        truth_yaw: Option<f64>,
    },
    /// Summarize every run record found under a directory.
    Report {
        /// Directory tree containing metrics.json run records.
        #[arg(long)]
        runs: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, fold, out } => commands::cmd_train(&config, fold, out),
        Command::Evaluate { checkpoint, manifest, fold, groups, out } => {
            commands::cmd_evaluate(&checkpoint, &manifest, fold, groups, out)
        }
        Command::Ablate { suite, config, fold, out } => {
            commands::cmd_ablate(&suite, &config, fold, out)
        }
        Command::AssignPrompts { manifest, config, out } => {
            commands::cmd_assign_prompts(&manifest, config, out)
        }
        Command::Predict { checkpoint, image, overlay, truth_pitch, truth_yaw } => {
            // clap's `requires` links enforce both-or-neither.
            let truth = truth_pitch
                .zip(truth_yaw)
                .map(|(pitch, yaw)| GazeAngles { pitch, yaw });
            commands::cmd_predict(&checkpoint, &image, overlay, truth)
        }
        Command::Report { runs } => commands::cmd_report(&runs),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            exit(EXIT_CONTRACT);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        exit(e.exit_code());
    }
}
