//! Experiment CLI: dataset synthesis, mask corruption, training runs,
//! ablation sweeps, and report merging.
//!
//! Exit codes: 0 success, 2 invalid arguments/config, 3 runtime failure.

mod commands;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "noisyseg", version, about = "Robust segmentation training under imperfect masks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the standard directory layout.
    SynthData(commands::SynthDataArgs),
    /// Corrupt the masks of a dataset by erosion/dilation.
    Corrupt(commands::CorruptArgs),
    /// Train one strategy (optionally across several seeds).
    Train(commands::TrainArgs),
    /// Run a predefined ablation sweep.
    #[command(subcommand)]
    Ablate(commands::AblateCmd),
    /// Merge run directories into one results table.
    Report(commands::ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthData(args) => commands::synth_data(args),
        Command::Corrupt(args) => commands::corrupt(args),
        Command::Train(args) => commands::train(args),
        Command::Ablate(cmd) => commands::ablate(cmd),
        Command::Report(args) => commands::report(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        let code = err
            .downcast_ref::<noisyseg::Error>()
            .map_or(3, |e| if e.is_validation() { 2 } else { 3 });
        std::process::exit(code);
    }
}
