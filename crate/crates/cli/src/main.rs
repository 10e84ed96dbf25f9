//! `weakshot`: batch driver for data generation, meta-training, evaluation
//! and the audit, ablation and sweep tools.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, UsageError};

#[derive(Parser)]
#[command(name = "weakshot", version, about = "Few-shot node classification under extremely weak supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stochastic block model dataset.
    GenData(commands::GenDataArgs),
    /// Meta-train from a config file; writes checkpoints and the episode log.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on meta-test tasks; writes eval.json.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Dump the propagated label matrix, entropies and pseudo-labels of one
    /// meta-test task.
    Propagate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Meta-test task index.
        #[arg(long, default_value_t = 0)]
        task: usize,
    },
    /// Check analytic loss gradients against central differences.
    Gradcheck(commands::GradcheckArgs),
    /// Train and evaluate all four ablation modes.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        seeds: commands::SeedArgs,
    },
    /// Train and evaluate over a list of values of one hyper-parameter.
    Sweep(commands::SweepArgs),
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; overrides `data` in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory; overrides the environment and the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override any config field, e.g. `--set seed=3 --set ablation=no_ib`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<config::RunConfig> {
        config::RunConfig::resolve(
            self.config.as_deref(),
            &Overrides {
                data: self.data.clone(),
                out_dir: self.out_dir.clone(),
                set: self.set.clone(),
            },
        )
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::GenData(args) => commands::gen_data(&args).map(|_| true),
        Command::Train(args) => commands::train(&args.resolve()?).map(|_| true),
        Command::Eval { config, checkpoint } => commands::eval(&config.resolve()?, &checkpoint).map(|_| true),
        Command::Propagate { config, task } => commands::propagate(&config.resolve()?, task).map(|_| true),
        Command::Gradcheck(args) => commands::gradcheck(&args),
        Command::Ablate { config, seeds } => commands::ablate(&config.resolve()?, &seeds).map(|_| true),
        Command::Sweep(args) => commands::sweep(&args.config.resolve()?, &args).map(|_| true),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || matches!(e.downcast_ref::<weakshot_core::Error>(), Some(weakshot_core::Error::Config(_)))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}
