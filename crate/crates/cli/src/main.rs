//! Batch front end: synth → features → label → impute → evaluate → report.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

/// Bad flags, bad config or unusable input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "persona-sense", version, about = "Personality inference from smartphone sensing logs")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated populations, e.g. `all,female,UK`.
    #[arg(long, global = true)]
    population: Option<String>,
    /// method1, method2 or both.
    #[arg(long, global = true)]
    method: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic cohort: manifest, logs and ground truth.
    Synth,
    /// Extract the study-period feature matrix.
    Features,
    /// Apply the missingness filter and derive trait labels.
    Label,
    /// Impute the retained feature matrix.
    Impute,
    /// Run the validation protocols and McNemar comparisons.
    Evaluate,
    /// Per-category feature importance.
    Importance,
    /// Per-country feature histograms.
    Distributions,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Features => "features",
            Command::Label => "label",
            Command::Impute => "impute",
            Command::Evaluate => "evaluate",
            Command::Importance => "importance",
            Command::Distributions => "distributions",
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let overrides = Overrides { seed: cli.seed, out: cli.out, populations: cli.population, method: cli.method };
    let cfg = RunConfig::load(cli.config.as_deref(), overrides)?;
    cfg.echo(cli.command.name())?;
    match cli.command {
        Command::Synth => stages::synth(&cfg),
        Command::Features => stages::features(&cfg),
        Command::Label => stages::label(&cfg),
        Command::Impute => stages::impute(&cfg),
        Command::Evaluate => stages::evaluate(&cfg),
        Command::Importance => stages::importance(&cfg),
        Command::Distributions => stages::distributions(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
