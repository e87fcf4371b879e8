//! `losshedge` command-line front end: scenario files in, tables, CSV and
//! JSON reports out.
//!
//! Exit status is 0 when every pass flag of the emitted reports is set, 1 when
//! a flag fails or a run errors, and 2 for usage or configuration errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failures surfaced by the command line.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] losshedge::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Run(losshedge::Error::InvalidParameter { .. }) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "losshedge",
    version,
    about = "Hedging under an expected-loss constraint with small transaction costs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print frictionless quantities, correctors and the expansion prediction.
    Price(CommonArgs),
    /// Run the band strategy with its prescribed capital.
    Simulate(CommonArgs),
    /// Compare empirical price premia with the second corrector across eps.
    Converge(CommonArgs),
    /// Indifference-price asymptotics for the configured payoff.
    Indiff(CommonArgs),
    /// Calibrate the capital cushion across eps.
    Calibrate(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Scenario file, as an alternative to --config.
    #[arg(value_name = "CONFIG", conflicts_with = "config")]
    config_path: Option<PathBuf>,
    /// Override a setting, e.g. `numeric.eps=0.05`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for report files; overrides `out_dir` in the scenario.
    #[arg(long, value_name = "PATH")]
    out_dir: Option<PathBuf>,
    /// Number of path traces to write (simulate only).
    #[arg(long, default_value_t = 0)]
    trace_paths: usize,
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (Command::Price(args)
    | Command::Simulate(args)
    | Command::Converge(args)
    | Command::Indiff(args)
    | Command::Calibrate(args)) = &cli.command;
    let path = args
        .config
        .clone()
        .or_else(|| args.config_path.clone())
        .ok_or_else(|| CliError::Config("a scenario file is required (--config <PATH>)".into()))?;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cfg = config::LoadedConfig::load(&path, &args.set)?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("reports"));
    match &cli.command {
        Command::Price(_) => commands::price(&cfg, &out_dir),
        Command::Simulate(_) => commands::simulate(&cfg, &out_dir, args.trace_paths),
        Command::Converge(_) => commands::converge(&cfg, &out_dir),
        Command::Indiff(_) => commands::indiff(&cfg, &out_dir),
        Command::Calibrate(_) => commands::calibrate(&cfg, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
