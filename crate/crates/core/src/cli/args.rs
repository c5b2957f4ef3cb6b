use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cli::config::{ModelSelector, RunConfig};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "wishvol", version, about = "Wishart stochastic volatility: UE and BB filtering, smoothing and comparison")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    pub model: Option<ModelSelector>,

    /// Ensemble size for backward sampling.
    #[arg(long, global = true)]
    pub draws: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Simulate returns and the true precision path.
    Simulate,
    /// Forward filter and report one-step forecast densities.
    Filter,
    /// Marginal likelihood over the (n, lambda) grid.
    GridSearch,
    /// Backward-sample precision paths and summarize correlations.
    Smooth,
    /// Log posterior likelihood ratio of UE against BB.
    ComparePlr,
    /// Mixture-weight Gibbs sampler.
    CompareMixture,
    /// Predictive interval lengths and coverage.
    Ppc,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Filter => "filter",
            Command::GridSearch => "grid-search",
            Command::Smooth => "smooth",
            Command::ComparePlr => "compare-plr",
            Command::CompareMixture => "compare-mixture",
            Command::Ppc => "ppc",
        }
    }
}

impl Cli {
    /// The config file (or defaults) with command-line flags applied on top.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(d) = self.draws {
            cfg.draws = d;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}
