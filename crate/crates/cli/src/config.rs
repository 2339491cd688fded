//! Model flags, environment overrides and the flat TOML config file.
//!
//! Precedence is flag, then `EVOBFT_*` environment variable (both handled by
//! clap), then config file, then the built-in example model.

use std::path::{Path, PathBuf};

use clap::Args;
use evobft::model::ModelConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Block reward R
    #[arg(long, env = "EVOBFT_REWARD")]
    pub reward: Option<f64>,
    /// Cost of checking a proposal
    #[arg(long = "check-cost", env = "EVOBFT_CHECK_COST")]
    pub check_cost: Option<f64>,
    /// Cost of sending a vote
    #[arg(long = "send-cost", env = "EVOBFT_SEND_COST")]
    pub send_cost: Option<f64>,
    /// Penalty κ for a losing vote
    #[arg(long, env = "EVOBFT_PENALTY")]
    pub penalty: Option<f64>,
    /// Committee size
    #[arg(short = 'N', long = "committee-size", env = "EVOBFT_N")]
    pub committee_size: Option<u32>,
    /// Votes needed to decide (ν)
    #[arg(long, env = "EVOBFT_THRESHOLD")]
    pub threshold: Option<u32>,
    /// Assortativity belief m in [0, 1]
    #[arg(long = "belief-m", env = "EVOBFT_BELIEF_M")]
    pub belief_m: Option<f64>,
    /// Initial honest fraction
    #[arg(long, env = "EVOBFT_X1")]
    pub x1: Option<f64>,
    #[arg(long = "max-rounds", env = "EVOBFT_MAX_ROUNDS")]
    pub max_rounds: Option<u32>,
    /// Convergence tolerance
    #[arg(long, env = "EVOBFT_TOLERANCE")]
    pub tolerance: Option<f64>,
    /// RNG seed for agent-based runs and sweeps
    #[arg(long, env = "EVOBFT_SEED")]
    pub seed: Option<u64>,
    /// Flat TOML file whose keys mirror the long flag names
    #[arg(long, env = "EVOBFT_CONFIG")]
    pub config: Option<PathBuf>,
}

/// Contents of a config file. Keys are the long flag names.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub reward: Option<f64>,
    pub check_cost: Option<f64>,
    pub send_cost: Option<f64>,
    pub penalty: Option<f64>,
    #[serde(alias = "N")]
    pub committee_size: Option<u32>,
    pub threshold: Option<u32>,
    pub belief_m: Option<f64>,
    pub x1: Option<f64>,
    pub max_rounds: Option<u32>,
    pub tolerance: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub axis: Vec<String>,
    pub seeds_per_cell: Option<u32>,
    pub mode: Option<String>,
    pub boundary_tol: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}

impl ModelArgs {
    pub fn load_file(&self) -> Result<ConfigFile, String> {
        match &self.config {
            Some(path) => ConfigFile::load(path),
            None => Ok(ConfigFile::default()),
        }
    }

    /// Merges flags over `file` over the example model.
    pub fn resolve(&self, file: &ConfigFile) -> ModelConfig {
        let mut cfg = ModelConfig::example();
        let p = &mut cfg.payoffs;
        p.reward = self.reward.or(file.reward).unwrap_or(p.reward);
        p.check_cost = self.check_cost.or(file.check_cost).unwrap_or(p.check_cost);
        p.send_cost = self.send_cost.or(file.send_cost).unwrap_or(p.send_cost);
        p.penalty = self.penalty.or(file.penalty).unwrap_or(p.penalty);
        let q = &mut cfg.protocol;
        q.committee_size = self
            .committee_size
            .or(file.committee_size)
            .unwrap_or(q.committee_size);
        q.threshold = self.threshold.or(file.threshold).unwrap_or(q.threshold);
        cfg.belief = self.belief_m.or(file.belief_m).unwrap_or(cfg.belief);
        cfg.initial_honest_fraction = self.x1.or(file.x1).unwrap_or(cfg.initial_honest_fraction);
        cfg.max_rounds = self
            .max_rounds
            .or(file.max_rounds)
            .unwrap_or(cfg.max_rounds);
        cfg.convergence_tol = self
            .tolerance
            .or(file.tolerance)
            .unwrap_or(cfg.convergence_tol);
        cfg.rng_seed = self.seed.or(file.seed).unwrap_or(cfg.rng_seed);
        cfg
    }
}
