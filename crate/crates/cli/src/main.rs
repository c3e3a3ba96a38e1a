mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Experiment, ExperimentConfig};
use error::CliError;
use output::OutputDir;

#[derive(Debug, Parser)]
#[command(
    name = "regq",
    version,
    about = "Single-loop regularized Q-learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Value iteration and projected fixed points on the GridWorld.
    GridworldFixedPoints(Common),
    /// Exact MSPBE curves of the single-loop learner across seeds.
    GridworldTrain(Common),
    /// MountainCar training; writes per-episode returns and the test summary.
    MountaincarTrain(Common),
    /// MountainCar test summary only.
    MountaincarEval(Common),
    /// Inequality battery on random MDPs and the GridWorld.
    Diagnostics(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Omit the timestamp line so repeated runs are byte-identical.
    #[arg(long)]
    no_header_comment: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (experiment, common) = match cli.command {
        Command::GridworldFixedPoints(c) => (Experiment::GridworldFixedPoints, c),
        Command::GridworldTrain(c) => (Experiment::GridworldTrain, c),
        Command::MountaincarTrain(c) => (Experiment::MountaincarTrain, c),
        Command::MountaincarEval(c) => (Experiment::MountaincarEval, c),
        Command::Diagnostics(c) => (Experiment::Diagnostics, c),
    };
    let config = ExperimentConfig::load(&common.config)?;
    config.validate(experiment)?;
    let base = common
        .config
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_default();
    let stem = config
        .output
        .clone()
        .unwrap_or_else(|| experiment.name().to_string());
    if stem.is_empty() || stem.contains(['/', '\\']) {
        return Err(CliError::Config(
            "`output` must be a plain file name".into(),
        ));
    }
    // Everything that can fail on bad input is checked before this point.
    let plan = commands::plan(experiment, &config, &base)?;
    let out = OutputDir::new(&common.out, &stem, !common.no_header_comment)?;
    commands::execute(plan, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("regq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
