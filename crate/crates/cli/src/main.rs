//! `fkan` command-line runner.

mod commands;
mod config;
mod task;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::UsageError;

#[derive(Parser)]
#[command(
    name = "fkan",
    version,
    about = "Fit Fourier KAN implicit neural representations",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, convergence.csv, reconstruction
    /// and metrics.json.
    Train(commands::TrainArgs),
    /// Score a checkpoint and print its metrics as JSON.
    Eval(commands::EvalArgs),
    /// Train FKAN and a parameter-matched tanh-MLP side by side.
    Compare(commands::CompareArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
