use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lesioncal::cli::{self, Command};

#[derive(Parser)]
#[command(
    name = "lesioncal",
    version,
    about = "Evaluation and calibration of lesion segmentation models"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic phantom dataset
    Synth(Args),
    /// Search a balanced cross-validation fold plan
    Folds(Args),
    /// Score models out of fold and pool the results
    Score(Args),
    /// Voxel-wise GLM of lesion density on performance
    Anatomy(Args),
    /// Embed lesion shapes and compare models by embedding distance
    Morphology(Args),
    /// Degrade images with increasing noise and test models against each other
    NoiseSweep(Args),
    /// False-positive statistics on control studies
    FpReport(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config value, e.g. `--set folds.k=10`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Synth(a) => (Command::Synth, a),
        Cmd::Folds(a) => (Command::Folds, a),
        Cmd::Score(a) => (Command::Score, a),
        Cmd::Anatomy(a) => (Command::Anatomy, a),
        Cmd::Morphology(a) => (Command::Morphology, a),
        Cmd::NoiseSweep(a) => (Command::NoiseSweep, a),
        Cmd::FpReport(a) => (Command::FpReport, a),
    };
    match cli::run(command, &args.config, args.out.as_deref(), &args.overrides) {
        Ok(meta) => {
            eprintln!("{}: wrote {} files", command.name(), meta.outputs.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
