mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::{LoadError, Overrides, RunConfig, PAPER_CFG};

/// Closed-loop frequency-domain identification studies.
///
/// Without `--config` the bundled benchmark configuration is used.
#[derive(Debug, Parser)]
#[command(name = "clsid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte Carlo run count, overriding `mc.runs`.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Innovation standard deviation, overriding `noise.sigma`.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Base noise seed, overriding `noise.base_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one period per experiment and write experiment_<id>.csv.
    Simulate,
    /// Apply the configured estimators to experiment files.
    Estimate {
        /// Experiment CSVs; defaults to the ones `simulate` writes.
        files: Vec<PathBuf>,
    },
    /// Write noise covariances, variance profiles and ordering predicates.
    Theory,
    /// Write figure data (fig2.csv, fig3.csv, fig4.csv).
    Report,
    /// Run the Monte Carlo study and compare with theory.
    Mc,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let (text, origin) = match &cli.config {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|source| CliError::Io {
                path: p.clone(),
                source,
            })?,
            p.display().to_string(),
        ),
        None => (PAPER_CFG.to_string(), "paper.cfg".to_string()),
    };
    let overrides = Overrides {
        runs: cli.runs,
        sigma: cli.sigma,
        seed: cli.seed,
        out: cli.out.clone(),
    };
    let cfg = RunConfig::parse(&text, &origin, &overrides).map_err(|e| match e {
        LoadError::Config(e) => CliError::Config(e),
        LoadError::System(e) => CliError::Core(e),
    })?;
    match &cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Estimate { files } => commands::estimate(&cfg, files),
        Command::Theory => commands::theory(&cfg),
        Command::Report => commands::report(&cfg),
        Command::Mc => commands::mc(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("clsid: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
