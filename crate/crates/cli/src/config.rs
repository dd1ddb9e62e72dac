//! Run configuration file.
//!
//! A TOML document with `[data]`, `[model]` and `[train]` tables plus the
//! optional `[search]` and `[ablation]` tables. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sharessm::data::{DelayedSumTask, FrequencyTask};
use sharessm::network::{Component, ModelConfig};
use sharessm::train::{SearchSpace, TrainConfig};

use crate::error::{CliError, CliResult};
use crate::ingest::CsvSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Frequency(FrequencyTask),
    DelayedSum(DelayedSumTask),
    Csv(CsvSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRun {
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub space: SearchSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRun {
    /// Each entry is `heterogeneous` or a comma list of components.
    #[serde(default = "default_variants")]
    pub variants: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for AblationRun {
    fn default() -> Self {
        Self {
            variants: default_variants(),
            seeds: default_seeds(),
        }
    }
}

fn default_variants() -> Vec<String> {
    let mut v = vec!["heterogeneous".to_string(), "b,c".to_string()];
    v.extend(Component::ALL.iter().map(|c| c.name().to_string()));
    v
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DataSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub search: Option<SearchRun>,
    #[serde(default)]
    pub ablation: Option<AblationRun>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(s) = &self.search {
            s.space.validate()?;
            if s.budget == 0 {
                return Err(CliError::Usage("search.budget must be >= 1".into()));
            }
        }
        if let Some(a) = &self.ablation {
            if a.seeds.is_empty() || a.variants.is_empty() {
                return Err(CliError::Usage(
                    "ablation needs at least one variant and one seed".into(),
                ));
            }
        }
        Ok(())
    }
}
