use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedmmx_cli::commands::{self, RunOptions};
use fedmmx_cli::HarnessError;

#[derive(Parser)]
#[command(name = "fedmmx", version, about = "Trust-weighted federated multi-modal learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic federated dataset for each seed.
    Generate(RunArgs),
    /// Train one simulation per seed and export logs, parameters and metrics.
    Train(RunArgs),
    /// Run the full model and its three ablations over shared seeds.
    Ablate(RunArgs),
    /// Compare trust and accuracy curves of finished runs.
    Compare {
        /// Run directories holding rounds-seed*.ndjson logs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `seeds` from the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

impl RunArgs {
    fn resolve(self) -> Result<RunOptions, HarnessError> {
        RunOptions::resolve(self.config.as_deref(), self.out, self.seeds, self.parallel)
    }
}

fn run(cli: Cli) -> Result<String, HarnessError> {
    match cli.command {
        Command::Generate(a) => commands::generate(&a.resolve()?),
        Command::Train(a) => commands::train(&a.resolve()?),
        Command::Ablate(a) => commands::ablate(&a.resolve()?),
        Command::Compare { runs, out } => commands::compare(&runs, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDMMX_LOG_LEVEL", "info")).init();
    match run(Cli::parse()) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
