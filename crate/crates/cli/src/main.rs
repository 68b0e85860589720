//! `fgsim`: partition, plan, train and report on the simulated devices.

mod commands;
mod inputs;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use fgsim_core::plan::DedupMode;

#[derive(Parser, Debug)]
#[command(name = "fgsim", version, about = "Partitioned full-graph GNN training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone, Default)]
pub struct Overrides {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory (overrides the config's `output`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum)]
    pub reorganize: Option<Toggle>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Two-level partition; writes partition.json.
    Partition {
        #[command(flatten)]
        args: Overrides,
    },
    /// Dedup plan for identity and reorganized chunk orders; writes plan.json.
    Plan {
        #[command(flatten)]
        args: Overrides,
    },
    /// Trains and meters every transfer; writes train_log.jsonl, summary.json, transfers.csv.
    Train {
        #[command(flatten)]
        args: Overrides,
        /// Compare against the single-device reference trainer.
        #[arg(long)]
        verify: bool,
    },
    /// Tabulates one run directory or every run directory below it.
    Report {
        dir: Option<PathBuf>,
        #[command(flatten)]
        args: Overrides,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModeArg {
    Baseline,
    P2p,
    Full,
}

impl From<ModeArg> for DedupMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => DedupMode::Baseline,
            ModeArg::P2p => DedupMode::P2p,
            ModeArg::Full => DedupMode::Full,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Toggle {
    On,
    Off,
}

/// Marks a run that completed but failed its reference check.
#[derive(Debug)]
pub struct VerificationFailed(pub String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed: {}", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition { args } => commands::partition(&args),
        Command::Plan { args } => commands::plan(&args),
        Command::Train { args, verify } => commands::train(&args, verify),
        Command::Report { dir, args } => report::report(dir, &args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<VerificationFailed>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
