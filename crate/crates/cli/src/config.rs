//! The experiment configuration file.
//!
//! ```json
//! {
//!   "data": { "train": "train.tsv", "validation": "validation.tsv", "test": "test.tsv" },
//!   "encoder": { "hidden_dims": [], "latent_dim": 64, "activation": "relu" },
//!   "training": { "scenario": "adamine", "epochs": 50, "seed": 0 },
//!   "evaluation": { "subset_size": 1000, "n_subsets": 10, "seed": 0 }
//! }
//! ```
//!
//! Every section except `data` may be omitted. Relative data paths are
//! resolved against the directory of the configuration file. Unknown keys
//! are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xmodal_core::{Activation, Dataset, EncoderSpec, EvalSettings, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// Encoder architecture; input dimensions come from the datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_dims: Vec::new(),
            latent_dim: 64,
            activation: Activation::Relu,
        }
    }
}

impl EncoderConfig {
    pub fn spec_for(&self, dataset: &Dataset) -> EncoderSpec {
        EncoderSpec::new(dataset.dim_a, dataset.dim_b, self.latent_dim)
            .with_hidden(self.hidden_dims.clone(), self.activation)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub data: DataPaths,
    pub encoder: EncoderConfig,
    pub training: TrainConfig,
    pub evaluation: EvalSettings,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut config: CliConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.data.train,
            &mut config.data.validation,
            &mut config.data.test,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(CliConfig::default()), CliConfig::load)
    }
}

/// Path of a required dataset, or a usage error naming the missing key.
pub fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("no {key} dataset given (config data.{key} or --{key}-data)")))
}
