use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    generate_blobs, load_manifest, split_even, split_half_pretrain, Augmentation, BatchSpec, BlobConfig, TaskSequence,
};
use crate::error::{Error, Result};
use crate::losses::{ComponentMask, LossWeights};
use crate::optim::LearningRates;
use crate::trainer::{OptimizerConfig, TrainConfig};

/// Current value of the `version` field.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian blobs generated on the fly. Without `seed` the blobs are
    /// redrawn for every run seed.
    Synthetic {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// A dataset manifest; relative paths resolve against the config file.
    Manifest { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    Even,
    HalfPretrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub split: SplitKind,
    pub tasks: usize,
    /// Train one model on the union of all stages instead of sequentially.
    #[serde(default)]
    pub joint: bool,
    /// Seed of the class shuffle; defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs_per_task: usize,
    #[serde(default = "TrainSection::default_p")]
    pub classes_per_batch: usize,
    #[serde(default = "TrainSection::default_k")]
    pub samples_per_class: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "TrainSection::default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default)]
    pub classifier_bias: bool,
    #[serde(default = "TrainSection::default_lr_initial")]
    pub lr_initial: f64,
    #[serde(default = "TrainSection::default_lr_later")]
    pub lr_later: f64,
    /// Classifier rates; default to the representation rates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_initial_classifier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_later_classifier: Option<f64>,
    #[serde(default = "TrainSection::default_beta1")]
    pub beta1: f64,
    #[serde(default = "TrainSection::default_beta2")]
    pub beta2: f64,
    #[serde(default = "TrainSection::default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub augmentation: Augmentation,
}

impl TrainSection {
    fn default_p() -> usize {
        BatchSpec::default().classes_per_batch
    }
    fn default_k() -> usize {
        BatchSpec::default().samples_per_class
    }
    fn default_feature_dim() -> usize {
        8
    }
    fn default_lr_initial() -> f64 {
        OptimizerConfig::default().initial.representation
    }
    fn default_lr_later() -> f64 {
        OptimizerConfig::default().later.representation
    }
    fn default_beta1() -> f64 {
        OptimizerConfig::default().beta1
    }
    fn default_beta2() -> f64 {
        OptimizerConfig::default().beta2
    }
    fn default_eps() -> f64 {
        OptimizerConfig::default().eps
    }
}

fn default_ks() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_ks")]
    pub k: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: default_ks() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Nothing is written when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Zeroes wall-clock fields in traces so reruns are bitwise identical.
    #[serde(default)]
    pub deterministic: bool,
    pub dataset: DatasetConfig,
    pub protocol: ProtocolConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub components: ComponentMask,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| field_path_at(text, s.start)).unwrap_or_default();
            Error::config(path, e.message().trim().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config file. A relative manifest path is made
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let DatasetConfig::Manifest { path: manifest } = &mut config.dataset {
            if manifest.is_relative() {
                if let Some(dir) = path.parent() {
                    *manifest = dir.join(&*manifest);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::parse("experiment config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                classes,
                dim,
                per_class,
                spread,
                ..
            } => {
                for (field, v) in [("classes", *classes), ("dim", *dim), ("per_class", *per_class)] {
                    if v == 0 {
                        return Err(Error::config(format!("dataset.{field}"), "must be positive"));
                    }
                }
                if *per_class < 2 {
                    return Err(Error::config("dataset.per_class", "need at least 2 samples per class"));
                }
                if !(spread.is_finite() && *spread >= 0.0) {
                    return Err(Error::config("dataset.spread", "must be finite and >= 0"));
                }
            }
            DatasetConfig::Manifest { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::config("dataset.path", "must not be empty"));
                }
            }
        }
        if self.protocol.tasks == 0 {
            return Err(Error::config("protocol.tasks", "must be at least 1"));
        }
        if !self.components.ce {
            return Err(Error::config("components.ce", "the component mask must include ce"));
        }
        if self.eval.k.is_empty() || self.eval.k.contains(&0) {
            return Err(Error::config("eval.k", "needs at least one K, all >= 1"));
        }
        let optional_lrs = [
            ("train.lr_initial_classifier", self.train.lr_initial_classifier),
            ("train.lr_later_classifier", self.train.lr_later_classifier),
        ];
        for (path, lr) in optional_lrs {
            if let Some(lr) = lr {
                if !(lr.is_finite() && lr > 0.0) {
                    return Err(Error::config(path, format!("learning rate must be > 0, got {lr}")));
                }
            }
        }
        self.train_config(self.seeds[0]).validate()
    }

    /// Trainer settings for one run seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs_per_task: t.epochs_per_task,
            batch: BatchSpec {
                classes_per_batch: t.classes_per_batch,
                samples_per_class: t.samples_per_class,
                seed,
            },
            optimizer: OptimizerConfig {
                initial: LearningRates {
                    representation: t.lr_initial,
                    classifier: t.lr_initial_classifier.unwrap_or(t.lr_initial),
                },
                later: LearningRates {
                    representation: t.lr_later,
                    classifier: t.lr_later_classifier.unwrap_or(t.lr_later),
                },
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            loss_weights: self.loss,
            components: self.components,
            augmentation: t.augmentation,
            hidden: t.hidden.clone(),
            feature_dim: t.feature_dim,
            classifier_bias: t.classifier_bias,
            seed,
            input_shape: Vec::new(),
            deterministic: self.deterministic,
        }
    }

    /// Loads or generates the dataset and splits it into stages.
    pub fn task_sequence(&self, seed: u64) -> Result<TaskSequence> {
        let dataset = match &self.dataset {
            DatasetConfig::Synthetic {
                classes,
                dim,
                per_class,
                spread,
                seed: data_seed,
            } => generate_blobs(&BlobConfig {
                classes: *classes,
                dim: *dim,
                per_class: *per_class,
                spread: *spread,
                seed: data_seed.unwrap_or(seed),
            })?,
            DatasetConfig::Manifest { path } => load_manifest(path)?,
        };
        let split_seed = self.protocol.split_seed.unwrap_or(seed);
        match self.protocol.split {
            SplitKind::Even => split_even(&dataset, self.protocol.tasks, split_seed),
            SplitKind::HalfPretrain => split_half_pretrain(&dataset, self.protocol.tasks, split_seed),
        }
    }

    /// SHA-256 over the canonical JSON form (sorted keys) of everything
    /// except the output location, so field order in the file and the
    /// output directory do not matter.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output");
        }
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn output_dir(&self) -> Option<&Path> {
        self.output.dir.as_deref()
    }
}

/// Dotted path of the TOML key whose value starts at or contains `offset`,
/// reconstructed from table headers and keys seen before it.
fn field_path_at(text: &str, offset: usize) -> String {
    let (mut table, mut key) = (String::new(), String::new());
    let mut start = 0;
    for line in text.split_inclusive('\n') {
        if start > offset {
            break;
        }
        start += line.len();
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            table = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = trimmed.split_once('=') {
            key = k.trim().trim_matches('"').to_string();
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}
