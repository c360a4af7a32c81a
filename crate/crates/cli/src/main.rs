mod commands;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::Settings;

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or missing inputs (exit code 2).
    Usage(String),
    /// The command started but could not finish (exit code 1).
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "mimn",
    version,
    about = "Memory-network CTR modeling, serving and benchmarking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file (`key = value` lines with `[section]` headers).
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.epochs=3`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (same as `--set out=DIR`).
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    fn settings(&self, command: &'static str) -> Result<Settings, CliError> {
        Settings::load(
            command,
            self.config.as_deref(),
            &self.set,
            self.out.as_deref(),
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Turn raw behavior logs into train/test sample files.
    Ingest(Common),
    /// Train a model and write a checkpoint and metric report.
    Train(Common),
    /// Compute the AUC of a checkpoint on a sample file.
    Evaluate(Common),
    /// Train an ablation grid over several seeds.
    Ablate(Common),
    /// Compare analytic gradients against central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Check a quadratic instead of the memory network.
        #[arg(long)]
        quadratic: bool,
        #[arg(long, hide = true)]
        inject_sign_bug: bool,
    },
    /// Build interest states from a behavior log and snapshot them.
    WarmUp(Common),
    /// Replay events through an interest store and score a request file.
    ServeSim(Common),
    /// Latency benchmark of state-based against recompute serving.
    Bench(Common),
    /// Score the same samples from states built by stale and fresh parameters.
    OutSync(Common),
    /// Add a snapshot to a snapshot directory.
    Snapshot(Common),
    /// Make an earlier snapshot the current one.
    Rollback {
        #[command(flatten)]
        common: Common,
        /// Snapshot id to restore.
        #[arg(long)]
        id: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(c) => commands::ingest(c.settings("ingest")?),
        Command::Train(c) => commands::train(c.settings("train")?),
        Command::Evaluate(c) => commands::evaluate(c.settings("evaluate")?),
        Command::Ablate(c) => commands::ablate(c.settings("ablate")?),
        Command::Gradcheck {
            common,
            quadratic,
            inject_sign_bug,
        } => {
            let mut s = common.settings("gradcheck")?;
            if quadratic {
                s.record("gradcheck", "mode", &"quadratic");
            }
            commands::gradcheck(s, inject_sign_bug)
        }
        Command::WarmUp(c) => commands::warm_up(c.settings("warm-up")?),
        Command::ServeSim(c) => commands::serve_sim(c.settings("serve-sim")?),
        Command::Bench(c) => commands::bench(c.settings("bench")?),
        Command::OutSync(c) => commands::out_sync(c.settings("out-sync")?),
        Command::Snapshot(c) => commands::snapshot(c.settings("snapshot")?),
        Command::Rollback { common, id } => {
            let mut s = common.settings("rollback")?;
            if let Some(id) = id {
                s.record("serve", "snapshot_id", &id);
            }
            commands::rollback(s)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
