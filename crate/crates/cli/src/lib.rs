//! Command-line surface of the dpwmixer forecaster.

pub mod error;
pub mod infer;
pub mod run;
pub mod settings;
pub mod tools;

use clap::{Parser, Subcommand};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dpwmixer", version, about = "Wavelet-pyramid dual-path mixer forecaster")]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, log, summary and manifest.
    Train(settings::RunArgs),
    /// Score a checkpoint on one split; optionally write predictions.
    Eval(infer::EvalArgs),
    /// Forecast the horizon after one look-back window.
    Forecast(infer::ForecastArgs),
    /// Time training epochs across look-back lengths and scale counts.
    Bench(tools::BenchArgs),
    /// Print the Haar pyramid's per-level energy ledger.
    InspectPyramid(tools::InspectArgs),
    /// Compare backprop gradients with central differences.
    GradCheck(tools::GradCheckArgs),
    /// Grid-search learning rate and batch size.
    Sweep(run::SweepArgs),
    /// Write a synthetic sine + trend + noise CSV.
    Synth(tools::SynthArgs),
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => run::cmd_train(a),
        Command::Eval(a) => infer::cmd_eval(a),
        Command::Forecast(a) => infer::cmd_forecast(a),
        Command::Bench(a) => tools::cmd_bench(a),
        Command::InspectPyramid(a) => tools::cmd_inspect_pyramid(a),
        Command::GradCheck(a) => tools::cmd_grad_check(a),
        Command::Sweep(a) => run::cmd_sweep(a),
        Command::Synth(a) => tools::cmd_synth(a),
    }
}
