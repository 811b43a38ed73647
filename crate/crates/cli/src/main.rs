mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{CliError, Outcome, EXIT_OPERATIONAL};
use crate::config::Overrides;

/// Tail analysis of fixed points of weighted branching recursions.
#[derive(Parser)]
#[command(name = "treetail", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve E[sum C^alpha] = 1 and check the tail hypotheses.
    SolveAlpha(Common),
    /// Sample a batch of the configured recursion.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Simulate even when the hypotheses fail.
        #[arg(long)]
        force: bool,
    },
    /// Tail index, tail constant and plot data for a batch file.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        batch: PathBuf,
    },
    /// Renewal duality, moment bounds and iteration convergence checks.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config leaf, e.g. `--set tails.k=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; defaults to $TREETAIL_OUT_DIR, then ./treetail-out.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<config::RunConfig, CliError> {
        let o = Overrides {
            sets: self.sets.clone(),
            seed: self.seed,
            reps: self.reps,
            workers: self.workers,
            out: self.out.clone(),
        };
        config::load(self.config.as_deref(), &o).map_err(CliError::Config)
    }
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::SolveAlpha(c) => commands::solve_alpha_cmd(&c.load()?),
        Command::Simulate { common, force } => commands::simulate_cmd(&common.load()?, force),
        Command::Analyze { common, batch } => commands::analyze_cmd(&common.load()?, &batch),
        Command::Verify(c) => commands::verify_cmd(&c.load()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            for p in &outcome.written {
                println!("{}", p.display());
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("treetail: {e}");
            ExitCode::from(EXIT_OPERATIONAL)
        }
    }
}
