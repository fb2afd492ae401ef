//! Command-line front end for point cloud generation, training,
//! explanation, and evaluation. Subcommands write self-describing output
//! directories: every run leaves a `run_config.json` with the exact
//! resolved parameters, so any artifact can be traced back and repeated.

mod common;
mod evaluate;
mod explain;
mod generate;
mod train;

use clap::{Parser, Subcommand};

use common::CliError;

#[derive(Parser)]
#[command(
    name = "ape",
    version,
    about = "Train small point cloud classifiers and explain their predictions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic shape dataset.
    Generate(generate::GenerateArgs),
    /// Train a classifier on a generated dataset.
    Train(train::TrainArgs),
    /// Compute per-point heatmaps for clouds under a trained classifier.
    Explain(explain::ExplainArgs),
    /// Compare attribution methods via point-dropping curves.
    Evaluate(evaluate::EvaluateArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => generate::run(args),
        Command::Train(args) => train::run(args),
        Command::Explain(args) => explain::run(args),
        Command::Evaluate(args) => evaluate::run(args),
    }
}

fn main() {
    // clap exits 2 on bad flags and 0 for --help/--version.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}
