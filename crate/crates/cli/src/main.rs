mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Experiment, Overrides, Profile};
use crate::error::Result;

/// Multi-RIS beam and phase control experiments.
#[derive(Debug, Parser)]
#[command(name = "rislab", version)]
struct Cli {
    /// TOML experiment file; omitted keys fall back to the profile.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Base profile: desk, paper or toy.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Random-walk trajectory dataset for the configured room.
    Generate,
    /// Train controllers for every (mu, T) of the sweep.
    Train,
    /// Roll out trained controllers and emit metric tables.
    Evaluate {
        /// Controller checkpoints written by `train`.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Compare a trained controller against the brute-force optimum of the toy game.
    Compare {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Time the decision pass over the configured sizes.
    Bench,
}

fn run(cli: &Cli) -> Result<PathBuf> {
    let overrides = Overrides {
        profile: cli.profile,
        seed: cli.seed,
        out: cli.out.clone(),
    };
    let x = Experiment::load(cli.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Generate => commands::generate(&x),
        Command::Train => commands::train_all(&x),
        Command::Evaluate { checkpoints } => commands::evaluate_all(&x, checkpoints),
        Command::Compare { checkpoint } => commands::compare(&x, checkpoint),
        Command::Bench => commands::bench(&x),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(manifest) => {
            eprintln!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
