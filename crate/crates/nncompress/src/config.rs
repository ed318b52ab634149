//! Experiment configuration: a single JSON file, schema-validated with
//! field-naming errors, plus `--set key=value` dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::admm::{RhoSchedule, DEFAULT_QUANT_EPSILON_FRACTION};
use crate::compare::PprModel;
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::model::build_architecture;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// MNIST IDX files in `dir` (or `NNC_MNIST_DIR` / workspace `data/mnist`
    /// when omitted).
    Mnist {
        #[serde(default)]
        dir: Option<PathBuf>,
        /// Optional cap on training samples, for quick runs.
        #[serde(default)]
        limit: Option<usize>,
    },
    Synthetic {
        seed: u64,
        count: usize,
        height: usize,
        width: usize,
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationConfig {
    pub bits: u32,
    /// Layers left unquantized (by index).
    #[serde(default)]
    pub skip_layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    #[serde(default)]
    pub schedule: RhoSchedule,
    pub epochs_per_iteration: usize,
    pub retrain_epochs: usize,
    #[serde(default = "default_epsilon")]
    pub quant_epsilon_fraction: f64,
    /// Non-structured keep-budgets per layer; `round2` tightens `round1`.
    #[serde(default)]
    pub nonstructured_round1: Option<Vec<Option<usize>>>,
    #[serde(default)]
    pub nonstructured_round2: Option<Vec<Option<usize>>>,
    /// Structured stage budgets: column vectors kept, then filters kept.
    #[serde(default)]
    pub column_budgets: Option<Vec<Option<usize>>>,
    #[serde(default)]
    pub filter_budgets: Option<Vec<Option<usize>>>,
    #[serde(default)]
    pub quantization: Option<QuantizationConfig>,
}

fn default_epsilon() -> f64 {
    DEFAULT_QUANT_EPSILON_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    /// Matched-accuracy band, absolute (0.001 = 0.1 points).
    #[serde(default = "default_band")]
    pub accuracy_band: f64,
    pub quant_bits: u32,
    #[serde(default)]
    pub ppr: PprModel,
    #[serde(default = "default_retries")]
    pub backoff_retries: u32,
}

fn default_band() -> f64 {
    0.001
}

fn default_retries() -> u32 {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub architecture: String,
    pub dataset: DatasetConfig,
    pub seed: u64,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub compression: Option<CompressionConfig>,
    #[serde(default)]
    pub comparison: Option<ComparisonConfig>,
}

impl ExperimentConfig {
    /// Parse with dotted-path overrides applied before deserialization, so
    /// bad override values get the same field-naming errors as the file.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{} is not valid JSON: {e}", path.display())))?;
        for kv in overrides {
            apply_override(&mut value, kv)?;
        }
        let config: ExperimentConfig = serde_json::from_value(value.clone()).map_err(|e| {
            Error::Config(format!("invalid config field: {e}"))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        build_architecture(&self.architecture, 0)?;
        self.train.validate()?;
        if let DatasetConfig::Mnist { dir, .. } = &self.dataset {
            let resolved = dir.clone().or_else(data::default_mnist_dir);
            match resolved {
                Some(d) if d.is_dir() => {}
                Some(d) => {
                    return Err(Error::Config(format!(
                        "dataset.dir: {} does not exist",
                        d.display()
                    )))
                }
                None => {
                    return Err(Error::Config(
                        "dataset.dir: no MNIST directory configured and none found \
                         (set dataset.dir or NNC_MNIST_DIR)"
                            .into(),
                    ))
                }
            }
        }
        if let Some(c) = &self.compression {
            c.schedule.validate()?;
            if c.epochs_per_iteration == 0 || c.retrain_epochs == 0 {
                return Err(Error::Config(
                    "compression.epochs_per_iteration and retrain_epochs must be >= 1".into(),
                ));
            }
            if c.quant_epsilon_fraction < 0.0 {
                return Err(Error::Config("compression.quant_epsilon_fraction must be >= 0".into()));
            }
        }
        if let Some(c) = &self.comparison {
            c.ppr.validate()?;
            if c.accuracy_band < 0.0 {
                return Err(Error::Config("comparison.accuracy_band must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Materialize the train and eval datasets, padded to the model input.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset)> {
        let model = build_architecture(&self.architecture, self.seed)?;
        let (_, h, w) = model.input_shape;
        match &self.dataset {
            DatasetConfig::Mnist { dir, limit } => {
                let dir = dir
                    .clone()
                    .or_else(data::default_mnist_dir)
                    .ok_or_else(|| Error::Config("no MNIST directory".into()))?;
                let (mut train, test) = data::load_mnist(&dir)?;
                if let Some(limit) = limit {
                    train = train.take(*limit);
                }
                Ok((train.with_padding(h, w)?, test.with_padding(h, w)?))
            }
            DatasetConfig::Synthetic { seed, count, height, width, classes } => {
                let train = data::synthetic(*seed, *count, *height, *width, *classes)
                    .with_padding(h, w)?;
                let test = data::synthetic(seed.wrapping_add(1), (*count / 4).max(*classes), *height, *width, *classes)
                    .with_padding(h, w)?;
                Ok((train, test))
            }
        }
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Apply one `a.b.c=value` override to a JSON tree. The value parses as JSON
/// when possible (numbers, booleans, arrays) and falls back to a string.
pub fn apply_override(root: &mut serde_json::Value, kv: &str) -> Result<()> {
    let (path, raw) = kv
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cursor.is_object() {
            return Err(Error::Config(format!(
                "override '{path}': '{}' is not an object",
                parts[..i].join(".")
            )));
        }
        let obj = cursor.as_object_mut().unwrap();
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), parsed);
            return Ok(());
        }
        cursor = obj
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    Ok(())
}
