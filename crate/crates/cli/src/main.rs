//! `adaeq` command-line harness.

mod bounds;
mod output;
mod toy;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "adaeq", version, about = "Adaptive ensemble Q-learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bias bounds, critical ensemble sizes and the Monte Carlo oracle.
    Bounds(bounds::BoundsArgs),
    /// Polynomial-fitting illustration of min-ensemble bias.
    Toy(toy::ToyArgs),
    /// Tabular training runs, one per seed, plus their aggregate.
    Train(train::TrainArgs),
    /// Training runs over a grid of policies, initial sizes and tolerances.
    Sweep(train::SweepArgs),
    /// Mean and standard deviation of several run CSVs.
    Aggregate(train::AggregateArgs),
}

/// Failure split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration: exit code 2.
    Usage(String),
    /// Anything that went wrong while running: exit code 3.
    Runtime(String),
}

impl From<adaeq::Error> for CliError {
    fn from(e: adaeq::Error) -> Self {
        use adaeq::Error as E;
        match e {
            E::Domain(_) | E::Config(_) | E::Parse(_) | E::InvalidMdp(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bounds(a) => bounds::run(&a),
        Command::Toy(a) => toy::run(&a),
        Command::Train(a) => train::run_train(&a),
        Command::Sweep(a) => train::run_sweep(&a),
        Command::Aggregate(a) => train::run_aggregate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
