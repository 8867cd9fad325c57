//! `prethermal` binary: subcommand parsing and exit-code mapping.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use prethermal_cli::commands::{
    cmd_analyze, cmd_generate, cmd_pipeline, cmd_simulate, cmd_sweep, cmd_version, Console,
};
use prethermal_cli::config::{ConfigFile, ExperimentConfig, Overrides};
use prethermal_cli::error::{exit_code, CliError};

#[derive(Parser)]
#[command(
    name = "prethermal",
    version,
    about = "Desk-scale pulsed spin-lock laboratory: lattices, Floquet evolution, acquisition and decay analysis"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides run.output_dir).
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Master seed (overrides run.master_seed).
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Worker-pool size (overrides run.workers).
    #[arg(long, global = true, value_name = "INT")]
    workers: Option<usize>,
    /// Suppress informational output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one lattice realization and write it as JSON.
    Generate,
    /// Run R disorder realizations and write per-realization and mean traces.
    Simulate,
    /// Run a parameter sweep with per-point analyses and a scaling fit.
    Sweep,
    /// Push a survival trace through the synthetic acquisition chain.
    Pipeline {
        /// Existing survival CSV; omitted = simulate a fresh realization.
        trace: Option<PathBuf>,
    },
    /// Run analyses over a stored trace and emit report JSONs and plot CSVs.
    Analyze {
        /// Trace CSV (survival or decay flavor).
        trace: PathBuf,
        /// Analysis names; defaults to the config's analysis.requested.
        analyses: Vec<String>,
    },
    /// Print the version.
    Version,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let console = Console { quiet: cli.quiet };
    let overrides = Overrides {
        output: cli.output.clone(),
        seed: cli.seed,
        workers: cli.workers,
    };
    let load_experiment = || -> Result<ExperimentConfig, CliError> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| CliError::config("this command requires --config"))?;
        let file = ConfigFile::load(path)?;
        ExperimentConfig::resolve(&file, &overrides)
    };
    match &cli.command {
        Command::Generate => cmd_generate(&load_experiment()?, console),
        Command::Simulate => cmd_simulate(&load_experiment()?, console),
        Command::Sweep => cmd_sweep(&load_experiment()?, console),
        Command::Pipeline { trace } => {
            cmd_pipeline(&load_experiment()?, trace.as_deref(), console)
        }
        Command::Analyze { trace, analyses } => {
            let cfg = match &cli.config {
                Some(path) => Some(ExperimentConfig::resolve(
                    &ConfigFile::load(path)?,
                    &overrides,
                )?),
                None => None,
            };
            let output_dir = cfg
                .as_ref()
                .map(|c| c.output_dir.clone())
                .or(cli.output.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let master_seed = cfg.as_ref().map(|c| c.master_seed).or(cli.seed).unwrap_or(0);
            cmd_analyze(
                cfg.as_ref(),
                trace,
                analyses,
                &output_dir,
                master_seed,
                console,
            )
        }
        Command::Version => {
            cmd_version();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
