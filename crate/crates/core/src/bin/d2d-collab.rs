//! Command-line front end for the experiment harness.
//!
//! Exit codes: 0 success, 1 numerical failure or infeasible model, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use d2d_collab::harness::{self, Experiment, RunConfig};
use d2d_collab::Error;

#[derive(Parser)]
#[command(version, about = "Mean-field D2D collaboration and offloading experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the experiment named in the file.
        #[arg(long)]
        experiment: Option<String>,
        /// Base seed; the configured seed count is kept (seeds N, N+1, ...).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for independent replications.
        #[arg(long)]
        workers: Option<usize>,
        /// Output root (default: file setting, then $D2D_COLLAB_OUT, then ./results).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn load(path: &Path, experiment: Option<&str>, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut config = harness::load_config(path)?;
    if let Some(name) = experiment {
        config.experiment = name.parse::<Experiment>()?;
    }
    if let Some(base) = seed {
        let count = config.seeds.len().max(1) as u64;
        config.seeds = (base..base + count).collect();
    }
    Ok(config)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load(&config, None, None)?;
            for w in cfg.validate()? {
                eprintln!("warning: {w}");
            }
            println!("{}: ok ({})", config.display(), cfg.experiment);
            Ok(())
        }
        Command::Run { config, experiment, seed, workers, out } => {
            let cfg = load(&config, experiment.as_deref(), seed)?;
            let summary = harness::run_with_workers(&cfg, out.as_deref(), workers)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", summary.dir.display());
            for f in &summary.files {
                println!("  {f}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
