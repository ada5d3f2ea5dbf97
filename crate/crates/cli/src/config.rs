use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ps3_core::ps3::Ps3Config;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Output logits through the embedding table.
    pub tied_output: bool,
    pub init_seed: u64,
    /// Embedding table to load (JSON matrix or whitespace rows, one row per
    /// token including eos).
    pub embeddings: Option<PathBuf>,
    pub freeze_embeddings: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 32,
            tied_output: false,
            init_seed: 0,
            embeddings: None,
            freeze_embeddings: false,
        }
    }
}

/// Single JSON file configuring `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSection,
    pub ps3: Ps3Config,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: TrainConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Relative embedding paths are resolved against the config file.
        if let (Some(p), Some(dir)) = (&cfg.model.embeddings, path.parent()) {
            if p.is_relative() {
                cfg.model.embeddings = Some(dir.join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.embed_dim == 0 || self.model.hidden_dim == 0 {
            bail!("model dimensions must be positive");
        }
        self.ps3.validate()?;
        Ok(())
    }

    /// Uses one seed for initialization, pretraining and PS3 sampling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.init_seed = seed;
        self.ps3.seed = seed;
        self.ps3.pretrain.seed = seed.wrapping_add(1);
        self
    }
}
