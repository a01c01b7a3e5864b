use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::gateway::{
    Backend, CacheMode, Gateway, HttpBackend, HttpConfig, RecordReplay, RetryPolicy, ScriptedMock,
    DEFAULT_API_KEY_ENV, DEFAULT_PARALLELISM,
};
use crate::pipeline::{Strategy, StrategyKind};
use crate::retrieval::DEFAULT_K;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Built-in echo mock: deterministic, offline.
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheModeSetting {
    Record,
    Replay,
    Passthrough,
}

impl From<CacheModeSetting> for CacheMode {
    fn from(m: CacheModeSetting) -> Self {
        match m {
            CacheModeSetting::Record => CacheMode::Record,
            CacheModeSetting::Replay => CacheMode::Replay,
            CacheModeSetting::Passthrough => CacheMode::Passthrough,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub api_key_env: String,
    pub max_retries: u32,
    /// Response store; enables the record/replay wrapper.
    pub cache: Option<PathBuf>,
    pub cache_mode: CacheModeSetting,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint: None,
            model: "echo-mock".to_string(),
            timeout_secs: 60,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            max_retries: RetryPolicy::default().max_retries,
            cache: None,
            cache_mode: CacheModeSetting::Record,
        }
    }
}

impl GatewaySettings {
    pub fn mode_label(&self) -> String {
        let backend = match self.backend {
            BackendKind::Mock => "mock",
            BackendKind::Http => "http",
        };
        match (&self.cache, self.cache_mode) {
            (Some(_), CacheModeSetting::Record) => format!("{backend}+record"),
            (Some(_), CacheModeSetting::Replay) => "replay".to_string(),
            _ => backend.to_string(),
        }
    }

    pub fn build(&self) -> Result<Gateway, HarnessError> {
        let inner: Arc<dyn Backend> = match self.backend {
            BackendKind::Mock => Arc::new(ScriptedMock::echo()),
            BackendKind::Http => {
                let endpoint = self.endpoint.clone().ok_or_else(|| {
                    HarnessError::Config("the http backend needs an endpoint".into())
                })?;
                let mut config = HttpConfig::new(endpoint).with_api_key_from_env(&self.api_key_env);
                config.timeout = Duration::from_secs(self.timeout_secs.max(1));
                config.retry.max_retries = self.max_retries;
                Arc::new(HttpBackend::new(config)?)
            }
        };
        let backend: Arc<dyn Backend> = match &self.cache {
            Some(store) => Arc::new(RecordReplay::new(inner, store, self.cache_mode.into())?),
            None => inner,
        };
        Ok(Gateway::new(backend, self.model.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub strategies: Vec<StrategyKind>,
    pub k: usize,
    pub gateway: GatewaySettings,
    pub parallelism: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            strategies: vec![
                StrategyKind::ZeroShot,
                StrategyKind::FewShot,
                StrategyKind::Pke,
            ],
            k: DEFAULT_K,
            gateway: GatewaySettings::default(),
            parallelism: DEFAULT_PARALLELISM,
            seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.strategies.is_empty() {
            return Err(HarnessError::Config(
                "at least one strategy is required".into(),
            ));
        }
        if self.k == 0 {
            return Err(HarnessError::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn strategy_list(&self) -> Vec<Strategy> {
        self.strategies
            .iter()
            .map(|&kind| Strategy::new(kind, self.k))
            .collect()
    }
}
