//! `bgg`: simulate, estimate and optimize the reserve-node governance game.
//!
//! Data goes to stdout (or `--out`), diagnostics to stderr. Exit status is 0
//! on success, 1 for invalid input and 2 when a valid run fails.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use bgg_core::Mode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "bgg",
    version,
    about = "Reserve-node governance game for vehicle blockchains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample one game: a trajectory (JSON) or a network event log (JSON lines).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_mode, default_value = "regular")]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Engine::Process)]
        engine: Engine,
    },
    /// Monte Carlo burst probabilities and the pre-exit law.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Report a single strategy instead of both.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[command(flatten)]
        mc: McFlags,
    },
    /// Cheapest feasible reserve configuration on the grid.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McFlags,
        /// Use exact lattice probabilities instead of Monte Carlo.
        #[arg(long)]
        exact: bool,
    },
    /// Cost surface over the grid as CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McFlags,
        #[arg(long)]
        exact: bool,
    },
    /// Exact burst probabilities and pre-exit law.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Require an explicit seed (flag or config).
    #[arg(long)]
    ci: bool,
}

#[derive(Debug, Args)]
struct McFlags {
    #[arg(long, value_name = "N")]
    trajectories: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Engine {
    Process,
    Network,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(warnings) => {
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            if warnings.iter().any(|w| w.fatal) {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
