//! Service configuration: a TOML file plus environment overrides.
//!
//! ```toml
//! [server]
//! bind = "127.0.0.1"
//! port = 8080
//! data_dir = "hvd-data"
//! classify_cap = 256
//! model = "models/dnn.hvdm"      # default model for /classify and queueing
//!
//! [embedding]
//! mode = "local"                 # or "remote"
//! url = "http://localhost:9000"  # remote only
//! width = 768
//! seed = 0
//!
//! [data]
//! dictionary = "keywords.txt"
//! stopwords = "stopwords.txt"
//! labeled = "honesty_discussion.jsonl"
//! grids = "grids.toml"
//!
//! [defaults]
//! seed = 42
//! folds = 10
//! strategy = "UNCERTAINTY"
//! ```
//!
//! `HVD_PORT` overrides the port and `HVD_EMBEDDING_URL` the embedding
//! service URL (which also switches the provider to remote mode).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hvd_core::annotate::Strategy;
use hvd_core::corpus::KeywordDictionary;
use hvd_core::eval::Grid;
use hvd_core::features::{EmbeddingProvider, HashingProvider, RemoteConfig, RemoteProvider, DEFAULT_WIDTH};
use hvd_core::models::Family;
use hvd_core::textprep::StopWordList;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const ENV_PORT: &str = "HVD_PORT";
pub const ENV_EMBEDDING_URL: &str = "HVD_EMBEDDING_URL";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    pub embedding: EmbeddingConfig,
    pub data: DataConfig,
    pub defaults: Defaults,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub classify_cap: usize,
    pub model: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
            data_dir: "hvd-data".into(),
            classify_cap: 256,
            model: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub mode: EmbeddingMode,
    pub url: Option<String>,
    pub width: usize,
    /// Seed of the local hashing provider.
    pub seed: u64,
    pub timeout_ms: u64,
    pub max_batch: usize,
    pub retries: u32,
    pub parallelism: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        let remote = RemoteConfig::new("", DEFAULT_WIDTH);
        EmbeddingConfig {
            mode: EmbeddingMode::Local,
            url: None,
            width: DEFAULT_WIDTH,
            seed: 0,
            timeout_ms: remote.timeout_ms,
            max_batch: remote.max_batch,
            retries: remote.retries,
            parallelism: remote.parallelism,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dictionary: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    /// Labeled review file used when a command is given no data source.
    pub labeled: Option<PathBuf>,
    pub grids: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub seed: u64,
    pub folds: usize,
    pub strategy: Strategy,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            seed: 42,
            folds: 10,
            strategy: Strategy::Uncertainty,
        }
    }
}

impl Config {
    /// Reads `path` (defaults when `None`) and applies the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Config, ServiceError> {
        let mut config = match path {
            Some(p) => Config::parse(&read(p)?).map_err(|e| e.with_detail("path", p.display().to_string()))?,
            None => Config::default(),
        };
        config.apply_env(|k| std::env::var(k).ok());
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Config, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::bad_input("invalid_config", e.to_string()))
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(port) = get(ENV_PORT).and_then(|p| p.trim().parse().ok()) {
            self.server.port = port;
        }
        if let Some(url) = get(ENV_EMBEDDING_URL).filter(|u| !u.trim().is_empty()) {
            self.embedding.url = Some(url);
            self.embedding.mode = EmbeddingMode::Remote;
        }
    }

    pub fn provider(&self) -> Result<Arc<dyn EmbeddingProvider>, ServiceError> {
        let e = &self.embedding;
        match e.mode {
            EmbeddingMode::Local => Ok(Arc::new(HashingProvider::new(e.width, e.seed))),
            EmbeddingMode::Remote => {
                let url = e
                    .url
                    .clone()
                    .ok_or_else(|| ServiceError::bad_input("invalid_config", "remote embedding mode needs embedding.url"))?;
                let config = RemoteConfig {
                    base_url: url,
                    width: e.width,
                    timeout_ms: e.timeout_ms,
                    max_batch: e.max_batch,
                    retries: e.retries,
                    parallelism: e.parallelism,
                };
                Ok(Arc::new(RemoteProvider::new(config)?))
            }
        }
    }

    pub fn stoplist(&self) -> Result<StopWordList, ServiceError> {
        match &self.data.stopwords {
            Some(p) => Ok(StopWordList::from_path(p)?),
            None => Ok(StopWordList::bundled()),
        }
    }

    pub fn dictionary(&self) -> Result<KeywordDictionary, ServiceError> {
        match &self.data.dictionary {
            Some(p) => Ok(KeywordDictionary::from_path(p)?),
            None => Ok(KeywordDictionary::bundled()),
        }
    }

    pub fn grids(&self) -> Result<BTreeMap<Family, Grid>, ServiceError> {
        match &self.data.grids {
            Some(p) => Ok(Grid::load_all(p)?),
            None => Ok(Grid::defaults()),
        }
    }
}

fn read(path: &Path) -> Result<String, ServiceError> {
    std::fs::read_to_string(path).map_err(|e| ServiceError::io(path, &e))
}
