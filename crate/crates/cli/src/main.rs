mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Settings;
use error::{CliError, EXIT_USAGE};

#[derive(Parser)]
#[command(
    name = "fedsynth",
    version,
    about = "Federated training with synthetic augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Run {
    /// Flat key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// `--key value` pairs overriding the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the three client shards and their manifest.
    Datagen(Run),
    /// Train a generator and write its synthetic pool.
    TrainGen(Run),
    /// Run a federation and keep the best round.
    FedTrain(Run),
    /// Score a checkpoint on every client's test split.
    Eval(Run),
    /// Sweep synthetic counts, sources and seeds.
    Ablate(Run),
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("FEDSYNTH_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::usage(format!("FEDSYNTH_THREADS={v:?} is not a positive integer"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::internal(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let (run, cmd): (&Run, fn(&Settings) -> Result<(), CliError>) = match &cli.command {
        Command::Datagen(r) => (r, commands::datagen),
        Command::TrainGen(r) => (r, commands::train_gen),
        Command::FedTrain(r) => (r, commands::fed_train),
        Command::Eval(r) => (r, commands::eval),
        Command::Ablate(r) => (r, commands::ablate),
    };
    let settings = Settings::load(&run.config, &run.overrides)?;
    cmd(&settings)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedsynth: {e}");
            ExitCode::from(e.code)
        }
    }
}
