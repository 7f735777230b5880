//! Gateway configuration: a TOML file with environment overrides.
//!
//! ```toml
//! backend = "http"
//! concurrency = 4
//!
//! [retry]
//! max_attempts = 3
//!
//! [http]
//! base_url = "https://api.openai.com/v1"
//! completion_model = "davinci"
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use feedloop_core::finetune::HyperParams;

use crate::error::{GatewayError, Result};
use crate::gateway::{Gateway, RetryPolicy, DEFAULT_CONCURRENCY};
use crate::http::{HttpBackend, HttpConfig};
use crate::mock::{EmbeddingMode, MockBackend, MockConfig, Vocabulary, DEFAULT_HASH_DIM};

pub const ENV_BACKEND: &str = "FEEDLOOP_BACKEND";
pub const ENV_BASE_URL: &str = "FEEDLOOP_BASE_URL";
pub const ENV_API_KEY: &str = "FEEDLOOP_API_KEY";
pub const ENV_DEBUG: &str = "FEEDLOOP_DEBUG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockEmbedding {
    #[default]
    Hash,
    BagOfWords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSection {
    pub model_tag: String,
    pub error_rate: f64,
    pub embedding: MockEmbedding,
    pub hash_dim: usize,
    pub planted_learning_rate_multiplier: f64,
    pub planted_prompt_loss_weight: f64,
}

impl Default for MockSection {
    fn default() -> Self {
        let d = MockConfig::default();
        MockSection {
            model_tag: d.model_tag,
            error_rate: d.error_rate,
            embedding: MockEmbedding::Hash,
            hash_dim: DEFAULT_HASH_DIM,
            planted_learning_rate_multiplier: d.planted_optimum.learning_rate_multiplier,
            planted_prompt_loss_weight: d.planted_optimum.prompt_loss_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub concurrency: usize,
    pub embedding_dim: Option<usize>,
    pub retry: RetryPolicy,
    pub http: HttpConfig,
    pub mock: MockSection,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            backend: BackendKind::Mock,
            concurrency: DEFAULT_CONCURRENCY,
            embedding_dim: None,
            retry: RetryPolicy::default(),
            http: HttpConfig::default(),
            mock: MockSection::default(),
        }
    }
}

impl GatewayConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `FEEDLOOP_*` overrides from `lookup`.
    pub fn apply_env_with(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(b) = lookup(ENV_BACKEND) {
            self.backend = match b.as_str() {
                "mock" => BackendKind::Mock,
                "http" => BackendKind::Http,
                other => return Err(GatewayError::Config(format!("unknown backend `{other}`"))),
            };
        }
        if let Some(url) = lookup(ENV_BASE_URL) {
            self.http.base_url = url;
        }
        if let Some(key) = lookup(ENV_API_KEY) {
            self.http.api_key = Some(key);
        }
        if let Some(d) = lookup(ENV_DEBUG) {
            self.http.debug = matches!(d.as_str(), "1" | "true" | "yes");
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_env_with(|k| std::env::var(k).ok())
    }

    /// Builds the gateway. `vocabulary_texts` feed the bag-of-words
    /// vocabulary and are ignored by other embedding modes.
    pub fn build<'a>(&self, vocabulary_texts: impl IntoIterator<Item = &'a str>) -> Result<Gateway> {
        let gateway = match self.backend {
            BackendKind::Http => Gateway::new(Arc::new(HttpBackend::new(self.http.clone())?)),
            BackendKind::Mock => Gateway::new(Arc::new(MockBackend::new(self.mock_config(vocabulary_texts)?))),
        };
        let gateway = gateway.with_concurrency(self.concurrency).with_retry(self.retry);
        Ok(match self.embedding_dim {
            Some(d) => gateway.with_embedding_dim(d),
            None => gateway,
        })
    }

    pub fn mock_config<'a>(&self, vocabulary_texts: impl IntoIterator<Item = &'a str>) -> Result<MockConfig> {
        let m = &self.mock;
        if !(0.0..=1.0).contains(&m.error_rate) {
            return Err(GatewayError::Config("mock.error_rate must lie in [0, 1]".into()));
        }
        let embedding = match m.embedding {
            MockEmbedding::Hash if m.hash_dim == 0 => {
                return Err(GatewayError::Config("mock.hash_dim must be positive".into()))
            }
            MockEmbedding::Hash => EmbeddingMode::Hash { dim: m.hash_dim },
            MockEmbedding::BagOfWords => {
                let vocab = Vocabulary::from_texts(vocabulary_texts);
                if vocab.is_empty() {
                    return Err(GatewayError::Config("bag-of-words vocabulary is empty".into()));
                }
                EmbeddingMode::BagOfWords(vocab)
            }
        };
        Ok(MockConfig {
            model_tag: m.model_tag.clone(),
            error_rate: m.error_rate,
            embedding,
            planted_optimum: HyperParams::new(m.planted_learning_rate_multiplier, m.planted_prompt_loss_weight),
            failing_points: Vec::new(),
        })
    }
}
