//! Pipeline configuration file (TOML).
//!
//! Relative paths are resolved against the directory containing the config
//! file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embeddings::DEFAULT_MIN_COUNT;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::pipeline::Init;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dictionary: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    pub output_dir: PathBuf,
}

fn default_threads() -> usize {
    1
}

fn default_min_count() -> u64 {
    DEFAULT_MIN_COUNT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default = "default_min_count")]
    pub min_count: u64,
    #[serde(default)]
    pub init: Init,
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn new(paths: Paths) -> Self {
        PipelineConfig {
            seed: 0,
            threads: 1,
            min_count: DEFAULT_MIN_COUNT,
            init: Init::Random,
            paths,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if self.model.dim == 0 {
            return Err(Error::Config("model.dim must be at least 1".into()));
        }
        if self.init == Init::Pretrained && self.paths.embeddings.is_none() {
            return Err(Error::Config(
                "init = \"pretrained\" requires paths.embeddings".into(),
            ));
        }
        self.train_config().validate()
    }

    pub fn set_base_dir(&mut self, dir: &Path) {
        self.base_dir = dir.to_path_buf();
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Resolves `path` and fails with a not-found I/O error naming it if absent.
    pub fn existing(&self, path: &Path) -> Result<PathBuf> {
        let resolved = self.resolve(path);
        if resolved.exists() {
            Ok(resolved)
        } else {
            Err(Error::io(
                resolved,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            ))
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output_dir)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            threads: self.threads,
            ..self.train.clone()
        }
    }
}
