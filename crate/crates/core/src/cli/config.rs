use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{SplitRatios, SyntheticConfig};
use crate::error::{Error, Result};
use crate::model::{AblationVariant, ModelConfig};
use crate::training::{LeaveOutSettings, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub variants: Vec<AblationVariant>,
    pub n_seeds: usize,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            variants: AblationVariant::ALL.to_vec(),
            n_seeds: 3,
        }
    }
}

/// Tiny instance used by the `gradcheck` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSettings {
    pub n_sensors: usize,
    pub timesteps: usize,
    pub embed_dim: usize,
    pub n_classes: usize,
    pub static_dim: usize,
    pub n_samples: usize,
    pub epsilon: f64,
    pub tol_rel: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            n_sensors: 4,
            timesteps: 8,
            embed_dim: 8,
            n_classes: 3,
            static_dim: 2,
            n_samples: 2,
            epsilon: 1e-6,
            tol_rel: 1e-4,
        }
    }
}

/// Everything a subcommand needs, loadable from one JSON file.
///
/// When `seed` is set it overrides `generator.seed` and `train.seed`; the
/// training seed also fixes the split and the parameter initialization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub generator: SyntheticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitRatios,
    pub ablation: AblationSettings,
    pub leaveout: LeaveOutSettings,
    pub gradcheck: GradcheckSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    /// Applies the global seed and checks every section.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(s) = self.seed {
            self.generator.seed = s;
            self.train.seed = s;
        }
        self.seed = Some(self.train.seed);
        self.generator.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        if self.ablation.n_seeds == 0 || self.ablation.variants.is_empty() {
            return Err(Error::Validation("ablation needs at least one seed and variant".into()));
        }
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
