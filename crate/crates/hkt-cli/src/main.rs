//! One binary, subcommand pipelines. Exit codes: 0 success, 1 verification
//! failure, 2 usage/configuration error, 3 I/O error.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hkt_core::HktError;

#[derive(Parser)]
#[command(name = "hkt", version, about = "hierarchical kernel attention lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic nested-operator dataset splits
    GenerateData(commands::GenerateDataArgs),
    /// Train a model and write checkpoint + metrics
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(commands::EvalArgs),
    /// Run the post-hoc diagnostics suite on a checkpoint
    Analyze(commands::AnalyzeArgs),
    /// Run executable certificates (causality, reductions, op counts, gradients)
    Verify(commands::VerifyArgs),
    /// Wall-clock and op-count benchmark over a sequence-length grid
    Bench(commands::BenchArgs),
    /// Ablation and (levels, stride) sensitivity sweep
    Sweep(commands::SweepArgs),
    /// Aggregate run artifacts in a directory into a summary
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenerateData(a) => commands::generate_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Verify(a) => commands::verify(a),
        Command::Bench(a) => commands::bench(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                HktError::Io(_) => 3u8,
                HktError::Refused(_) => 1,
                _ => 2,
            })
        }
    }
}
