// SPDX-License-Identifier: MIT OR Apache-2.0

//! Argument parsing and command dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::info;

use crate::artifacts::write_manifest;
use crate::commands::{self, Run};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "modepatch", version, about = "Cross-mode activation patching experiments")]
pub struct Cli {
    /// TOML run config; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Global seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (overrides `workers` in the config).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the paired synthetic dataset.
    GenData,
    /// Train the decoder on the training keys.
    Train,
    /// Per-mode decoding metrics on the held-out keys.
    EvalBaseline,
    /// Full activation patching for every direction and site.
    Patch,
    /// Interpolated patching over the alpha grid.
    Interpolate,
    /// Coarse region patching and ranked top-k conv subgroups.
    Localize,
    /// Sliding-window patching over time.
    Trace,
    /// Causal scrubbing variants.
    Scrub,
    /// Single-neuron patching sweep and winner table.
    NeuronSweep,
    /// Top-k neuron saturation curves.
    Saturate,
    /// Winner-neuron statistics and coverage curves.
    Winners,
    /// Consolidate all reports into summary.json and summary.txt.
    Report,
    /// Every step above, in order.
    RunAll,
}

impl Cli {
    /// Config after applying command-line overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::resolved_default(),
        };
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one command inside a thread pool of the configured size, then
/// refreshes the manifest.
pub fn execute(cfg: RunConfig, command: Command) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    let out = cfg.out.clone();
    let run = Run::new(cfg, out.clone());
    pool.install(|| -> Result<()> {
        match command {
            Command::GenData => commands::gen_data(&run),
            Command::Train => commands::train_cmd(&run),
            Command::EvalBaseline => commands::eval_baseline(&run),
            Command::Patch => commands::patch(&run),
            Command::Interpolate => commands::interpolate(&run),
            Command::Localize => commands::localize(&run),
            Command::Trace => commands::trace(&run),
            Command::Scrub => commands::scrub(&run),
            Command::NeuronSweep => commands::neuron_sweep(&run),
            Command::Saturate => commands::saturate(&run),
            Command::Winners => commands::winners(&run),
            Command::Report => report::report(&out).map(|_| ()),
            Command::RunAll => commands::run_all(&run),
        }
    })?;
    write_manifest(&out, &run.cfg)?;
    info!("outputs in {}", out.display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    execute(cfg, cli.command)
}
