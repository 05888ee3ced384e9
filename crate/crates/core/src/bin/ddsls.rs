use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ddsls::cli::{error_record, run, Command, Overrides};
use ddsls::config::ExperimentConfig;
use ddsls::io::to_json;
use ddsls::synth::Mode;
use ddsls::{Error, Result};

/// Data-driven LQG synthesis experiments.
#[derive(Debug, Parser)]
#[command(name = "ddsls", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON configuration; defaults reproduce the benchmark experiments.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// noiseless, robust or naive.
    #[arg(long, global = true)]
    mode: Option<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Generate an ensemble of noisy trajectories.
    Simulate,
    /// Synthesize a controller from averaged data.
    Synth,
    /// Tabulate the suboptimality and tail bounds.
    Bounds,
    /// Compare controllers in the receding-horizon loop.
    Mpc,
    /// Monte Carlo tail of the averaged noise Hankel norm.
    Concentration,
    /// Bootstrap noise-level estimates against the realized level.
    Bootstrap,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Synth => Command::Synth,
            Cmd::Bounds => Command::Bounds,
            Cmd::Mpc => Command::Mpc,
            Cmd::Concentration => Command::Concentration,
            Cmd::Bootstrap => Command::Bootstrap,
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("DDSLS_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("DDSLS_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn execute(cli: &Cli) -> Result<String> {
    configure_threads()?;
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        trials: cli.trials,
        mode: cli.mode.as_deref().map(str::parse::<Mode>).transpose()?,
    };
    let cfg = overrides.apply(cfg)?;
    let summary = run(cli.command.into(), &cfg)?;
    to_json(&summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(text) => {
            // A closed stdout (e.g. piped into `head`) is not an error.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
