//! One JSON file describing a whole run: featurization, model, training,
//! priors, paths and seed. Every key is optional and unknown keys are
//! rejected with their path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::FeatureConfig;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StubTag {
    Stub,
}

/// `"stub"` or a list of embedding files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorSource {
    Stub(StubTag),
    Files(Vec<PathBuf>),
}

impl Default for PriorSource {
    fn default() -> Self {
        PriorSource::Stub(StubTag::Stub)
    }
}

impl PriorSource {
    /// Parses repeated command-line values: a single `stub`, or files.
    pub fn from_args(values: &[String]) -> Result<Self, String> {
        match values {
            [] => Err("empty prior selection".into()),
            [one] if one == "stub" => Ok(PriorSource::default()),
            many if many.iter().any(|v| v == "stub") => {
                Err("`stub` cannot be combined with files".into())
            }
            files => Ok(PriorSource::Files(
                files.iter().map(PathBuf::from).collect(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, corpus split, noise and dropout. The
    /// `train.seed` key is overwritten by it.
    pub seed: u64,
    pub precision: Precision,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Recycling stages at inference; defaults to `model.stages`.
    pub recycles: Option<usize>,
    pub structure_prior: PriorSource,
    pub sequence_prior: PriorSource,
    /// Directory of PDB files to train on. Without it, training uses the
    /// built-in synthetic toy corpus.
    pub data_dir: Option<PathBuf>,
    pub chain: String,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::F32,
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            recycles: None,
            structure_prior: PriorSource::default(),
            sequence_prior: PriorSource::default(),
            data_dir: None,
            chain: "A".into(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: `{key}`: {message}")]
    Schema {
        path: PathBuf,
        key: String,
        message: String,
    },
    #[error("config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig =
            serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
                path: origin.to_path_buf(),
                key: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.features.validate().map_err(|e| wrap(&e))?;
        self.model.validate().map_err(|e| wrap(&e))?;
        self.train.validate().map_err(|e| wrap(&e))?;
        if self.recycles == Some(0) {
            return Err(ConfigError::Invalid("recycles must be >= 1".into()));
        }
        Ok(())
    }

    pub fn recycles(&self) -> usize {
        self.recycles.unwrap_or(self.model.stages)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
