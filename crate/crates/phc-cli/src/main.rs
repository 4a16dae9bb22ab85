use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use commands::Experiment;
use output::Out;

#[derive(Parser, Debug)]
#[command(name = "phc", version, about = "Phase-cascade laboratory: base flows, cascades, assembly and direct checks")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, env = "PHC_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, env = "PHC_OUT", global = true, default_value = "phc-out")]
    out: PathBuf,
    /// Seed for randomized data; overrides the config value.
    #[arg(long, env = "PHC_SEED", global = true)]
    seed: Option<u64>,
    /// Size of the worker pool used for ε sweeps and field kernels.
    #[arg(long, env = "PHC_WORKERS", global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the base flow and eiconal transport.
    Base,
    /// Run the profile cascade and write per-order profiles and the dictionary.
    Cascade,
    /// Sweep ε and report residual norms and slopes.
    Assemble,
    /// Direct Navier-Stokes run, compared with the exact solution when one is known.
    Direct,
    /// Numerical experiments.
    Experiment {
        #[arg(value_enum)]
        which: Experiment,
    },
    /// Invariant suite of the configured cascade, or acceptance criteria.
    Check {
        /// Run acceptance criterion N instead (repeatable).
        #[arg(long = "criterion", value_name = "N")]
        criteria: Vec<usize>,
        /// Run every acceptance criterion.
        #[arg(long, conflicts_with = "criteria")]
        all_criteria: bool,
    },
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().context("configuring the worker pool")?;
    }
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let origin = cli.config.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<defaults>".into());
    let mut cfg = config::load(text.as_deref(), &origin, &config::env_vars())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = Out::create(&cli.out)?;
    match cli.command {
        Command::Base => commands::base(&cfg, &out),
        Command::Cascade => commands::cascade(&cfg, &out),
        Command::Assemble => commands::assemble(&cfg, &out),
        Command::Direct => commands::direct(&cfg, &out),
        Command::Experiment { which } => commands::experiment(which, &cfg, &out),
        Command::Check { criteria, all_criteria } => {
            if all_criteria || !criteria.is_empty() {
                commands::criteria(&criteria, &out)
            } else {
                commands::check(&cfg, &out)
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("phc: checks failed; see the manifest");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("phc: error: {e:#}");
            ExitCode::from(2)
        }
    }
}
