//! Experiment configuration, read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::objective::LossKind;
use crate::baselines::BaselineConfig;
use crate::data::{self, LabeledDataset};
use crate::error::{invalid, Result};
use crate::overlap::OverlapLossConfig;
use crate::synth::{self, SynthSpec};

/// Generator settings plus where to fit it: a CSV path (normal rows are
/// used) or `builtin:2d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSource {
    #[serde(default = "builtin_name")]
    pub source: String,
    #[serde(flatten)]
    pub spec: SynthSpec,
}

fn builtin_name() -> String {
    synth::BUILTIN_2D.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Csv(PathBuf),
    Synth(SynthSource),
}

impl DatasetSource {
    pub fn synth(spec: SynthSpec) -> Self {
        Self::Synth(SynthSource {
            source: builtin_name(),
            spec,
        })
    }

    pub fn load(&self) -> Result<LabeledDataset> {
        match self {
            Self::Csv(path) => data::load_csv(path),
            Self::Synth(s) => {
                let source = if s.source == synth::BUILTIN_2D {
                    synth::builtin_2d_source(synth::BUILTIN_SOURCE_ROWS, s.spec.seed)
                } else {
                    let ds = data::load_csv(&s.source)?;
                    let normals: Vec<usize> = (0..ds.len()).filter(|&i| !ds.labels()[i]).collect();
                    ds.features().select_rows(&normals)
                };
                synth::make_synthetic_dataset(&source, &s.spec)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 20,
            epochs: 200,
            batch_size: 256,
            learning_rate: 0.01,
            momentum: 0.7,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub loss: LossKind,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub overlap: OverlapLossConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default = "default_gamma")]
    pub gamma_l: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Results file; the CLI's `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Measure wall-clock training time. Off by default so that records are
    /// reproducible byte for byte.
    #[serde(default)]
    pub record_timing: bool,
}

fn default_gamma() -> f64 {
    0.2
}

fn default_train_fraction() -> f64 {
    0.7
}

fn default_repeats() -> usize {
    5
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource, loss: LossKind) -> Self {
        Self {
            dataset,
            loss,
            network: NetworkConfig::default(),
            overlap: OverlapLossConfig::default(),
            baseline: BaselineConfig::default(),
            gamma_l: default_gamma(),
            train_fraction: default_train_fraction(),
            repeats: default_repeats(),
            base_seed: 0,
            output: None,
            record_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(invalid("repeats must be at least 1"));
        }
        if !(self.gamma_l > 0.0 && self.gamma_l <= 1.0) {
            return Err(invalid("gamma_l must lie in (0, 1]"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid("train_fraction must lie in (0, 1)"));
        }
        let n = &self.network;
        if n.hidden_dim == 0 || n.epochs == 0 {
            return Err(invalid("hidden_dim and epochs must be positive"));
        }
        if n.batch_size < 4 {
            return Err(invalid("batch_size must be at least 4"));
        }
        self.overlap.validate()?;
        self.baseline.validate()?;
        if let DatasetSource::Synth(s) = &self.dataset {
            s.spec.validate()?;
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical JSON form, output path excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<ExperimentConfig>),
    One(Box<ExperimentConfig>),
}

/// Parses a single configuration object or an array of them.
pub fn parse_configs(text: &str) -> Result<Vec<ExperimentConfig>> {
    let configs = match serde_json::from_str::<OneOrMany>(text) {
        Ok(OneOrMany::Many(v)) => v,
        Ok(OneOrMany::One(c)) => vec![*c],
        // Re-parse as a single object for a precise error message.
        Err(_) => vec![serde_json::from_str::<ExperimentConfig>(text)?],
    };
    if configs.is_empty() {
        return Err(invalid("configuration file holds no runs"));
    }
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}

pub fn load_configs(path: impl AsRef<Path>) -> Result<Vec<ExperimentConfig>> {
    parse_configs(&std::fs::read_to_string(path)?)
}
