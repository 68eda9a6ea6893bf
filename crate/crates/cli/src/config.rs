//! The JSON run configuration shared by `train`, `eval` and `ablate`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vocseg_core::harness::{AblationConfig, TrainConfig};
use vocseg_core::model::ModelConfig;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    pub configs: Vec<AblationConfig>,
    pub seeds: Vec<u64>,
    /// Held-out speakers; empty means all.
    pub folds: Vec<u32>,
    /// Worker threads; 0 means one per available core.
    pub threads: usize,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            configs: AblationConfig::ALL.to_vec(),
            seeds: vec![1, 2, 3],
            folds: Vec::new(),
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub data: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationSettings,
}

impl RunConfigFile {
    /// Parses a config file; schema errors name the offending key path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| anyhow::anyhow!("{}: at `{}`: {}", path.display(), e.path(), e.inner()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Writes the fully materialised config next to the outputs.
    pub fn save_resolved(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join(RESOLVED_CONFIG), text + "\n")?;
        Ok(())
    }
}
