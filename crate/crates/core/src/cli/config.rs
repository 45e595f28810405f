use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, CommonArgs, Result};
use crate::inference::{RelevanceMode, CMC_RANKS};
use crate::meta::TrainConfig;
use crate::synthdata::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Target scored by `ablate`.
    pub target: String,
    /// Target scored after every epoch to pick `best.ckpt`; empty disables.
    pub validation: String,
    /// Share of each identity's rows used as queries.
    pub query_fraction: f64,
    /// CMC ranks written next to mAP.
    pub ranks: Vec<usize>,
    pub relevance_mode: RelevanceMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            target: "test".into(),
            validation: "val".into(),
            query_fraction: 1.0 / 3.0,
            ranks: CMC_RANKS.to_vec(),
            relevance_mode: RelevanceMode::AllSamples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also train the model without decorrelation for the ablation table.
    pub ablation_model: bool,
    /// Keep a checkpoint for every epoch, not only best and final.
    pub epoch_checkpoints: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            ablation_model: true,
            epoch_checkpoints: true,
        }
    }
}

/// Everything one invocation needs; each section is optional in the file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::new(e.kind, format!("{}: {}", path.display(), e.message)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| CliError::usage(e.to_string()))?;
        if !(self.eval.query_fraction > 0.0 && self.eval.query_fraction < 1.0) {
            return Err(CliError::usage(format!("eval.query_fraction {} outside (0, 1)", self.eval.query_fraction)));
        }
        if self.eval.ranks.is_empty() || self.eval.ranks.contains(&0) {
            return Err(CliError::usage("eval.ranks must be non-empty and positive"));
        }
        if self.data.num_domains < 2 {
            return Err(CliError::usage("data.num_domains must be at least 2"));
        }
        for name in [&self.eval.target, &self.eval.validation] {
            if !name.is_empty() && !self.data.targets.iter().any(|t| &t.name == name) {
                return Err(CliError::usage(format!("eval refers to unknown target '{name}'")));
            }
        }
        Ok(())
    }
}

/// Loads the config named by `--config` (or defaults), applies `--seed`
/// and picks the output directory.
pub(super) fn resolve(common: &CommonArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    cfg.output.dir = out.clone();
    Ok((cfg, out))
}
