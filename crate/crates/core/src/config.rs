//! Pipeline configuration: one file, per-command override flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecConfig;
use crate::filter::FilterConfig;
use crate::flatten::ChunkConfig;
use crate::metrics::TurnTakingParams;
use crate::simulate::SimConfig;
use crate::vocab::VocabLayout;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config file must end in .toml or .json: {0}")]
    UnknownExtension(String),
    #[error("referenced vocab file does not exist: {0}")]
    MissingVocab(String),
    #[error("invalid vocab layout: {0}")]
    BadVocab(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub order: usize,
    pub alpha: f64,
    pub temperature: f64,
    /// Base seed for inference sampling.
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            order: 3,
            alpha: 0.1,
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// Fully resolved pipeline configuration. Every default matches the module
/// defaults, so an empty file (or no file) runs the reference setup.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Optional path to a vocabulary layout JSON; the built-in default
    /// layout is used when absent.
    pub vocab_path: Option<PathBuf>,
    pub codec: CodecConfig,
    pub filter: FilterConfig,
    pub sim: SimConfig,
    pub chunk: ChunkConfig,
    pub predictor: PredictorConfig,
    pub metrics: TurnTakingParams,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.display().to_string(),
            message,
        };
        let cfg: PipelineConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?,
            Some("json") => serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?,
            _ => return Err(ConfigError::UnknownExtension(path.display().to_string())),
        };
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn check_paths(&self) -> Result<(), ConfigError> {
        if let Some(vocab) = &self.vocab_path {
            if !vocab.exists() {
                return Err(ConfigError::MissingVocab(vocab.display().to_string()));
            }
        }
        Ok(())
    }

    /// Loads and validates the vocabulary layout this pipeline uses.
    pub fn resolve_layout(&self) -> Result<VocabLayout, ConfigError> {
        let layout = match &self.vocab_path {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                serde_json::from_str::<VocabLayout>(&text).map_err(|e| ConfigError::Parse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?
            }
            None => VocabLayout::default(),
        };
        layout
            .validate()
            .map_err(|e| ConfigError::BadVocab(e.to_string()))?;
        Ok(layout)
    }
}
