//! Command-line front end. Exit codes: 0 success, 2 configuration error,
//! 3 numerical failure, 4 data or checkpoint error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transport_rj::cli::{self, Command, Preset, RunConfig, MANIFEST_FILE};
use transport_rj::{Error, Result};

#[derive(Parser)]
#[command(name = "trj", version, about = "Transport reversible-jump MCMC")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Fit a transport map per model (or one conditional map) by variational inference.
    Train(Common),
    /// Run trans-dimensional chains with the configured jump kernel.
    Sample(Common),
    /// Running model probabilities and bridge-estimator replicates.
    Diagnose(Common),
    /// Importance-sampling evidence of every model under the trained maps.
    Evidence(Common),
    /// Retrain and score the maps at several flow depths.
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration, or a manifest.toml from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration: sas, factor-analysis or variable-selection.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulate the data set instead of reading target.data.
    #[arg(long)]
    synthetic_data: bool,
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let preset = c.preset.as_deref().map(str::parse::<Preset>).transpose()?;
    let mut cfg = match (&c.config, preset) {
        (Some(path), p) => RunConfig::load(path, p)?,
        (None, Some(p)) => RunConfig::preset(p),
        (None, None) => return Err(Error::Config("pass --config <path> or --preset <name>".into())),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if c.synthetic_data {
        cfg.target.synthetic_data = true;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match &cli.command {
        Sub::Train(c) => (Command::Train, c),
        Sub::Sample(c) => (Command::Sample, c),
        Sub::Diagnose(c) => (Command::Diagnose, c),
        Sub::Evidence(c) => (Command::Evidence, c),
        Sub::Ablate(c) => (Command::Ablate, c),
    };
    match resolve(common).and_then(|cfg| cli::run(command, &cfg).map(|m| (cfg, m))) {
        Ok((cfg, manifest)) => {
            println!(
                "{}: wrote {} files and {}",
                command.name(),
                manifest.outputs.len(),
                cfg.out.join(MANIFEST_FILE).display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("trj {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
