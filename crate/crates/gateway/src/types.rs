use serde::{Deserialize, Serialize};

use feedloop_core::finetune::{HyperParams, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};
use feedloop_core::{DecodingMode, DecodingParams, FinetuneExample};

use crate::error::{GatewayError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub decoding: DecodingParams,
    pub n_samples: usize,
    /// Honored by the mock backend only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, decoding: DecodingParams) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            decoding,
            n_samples: 1,
            seed: None,
        }
    }

    pub fn samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(GatewayError::invalid("prompt is empty"));
        }
        if self.n_samples == 0 {
            return Err(GatewayError::invalid("n_samples must be at least 1"));
        }
        check_decoding(&self.decoding)
    }
}

pub(crate) fn check_decoding(d: &DecodingParams) -> Result<()> {
    if d.max_tokens == 0 {
        return Err(GatewayError::invalid("max_tokens must be at least 1"));
    }
    match (d.mode, d.top_p) {
        (DecodingMode::Greedy, None) => Ok(()),
        (DecodingMode::Greedy, Some(_)) => Err(GatewayError::invalid("greedy decoding takes no top_p")),
        (DecodingMode::Nucleus, Some(p)) if p > 0.0 && p <= 1.0 => Ok(()),
        (DecodingMode::Nucleus, _) => Err(GatewayError::invalid("nucleus decoding needs top_p in (0, 1]")),
    }
}

/// Cuts `text` at the first occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneJobSpec {
    pub dataset: Vec<FinetuneExample>,
    /// Held-out examples the provider reports validation loss on.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validation: Vec<FinetuneExample>,
    pub batch_size: u32,
    pub epochs: u32,
    pub learning_rate_multiplier: f64,
    pub prompt_loss_weight: f64,
}

impl FinetuneJobSpec {
    pub fn new(dataset: Vec<FinetuneExample>, params: HyperParams) -> Self {
        FinetuneJobSpec {
            dataset,
            validation: Vec::new(),
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            learning_rate_multiplier: params.learning_rate_multiplier,
            prompt_loss_weight: params.prompt_loss_weight,
        }
    }

    pub fn with_validation(mut self, validation: Vec<FinetuneExample>) -> Self {
        self.validation = validation;
        self
    }

    pub fn params(&self) -> HyperParams {
        HyperParams::new(self.learning_rate_multiplier, self.prompt_loss_weight)
    }

    pub fn check(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(GatewayError::invalid("finetune dataset is empty"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(GatewayError::invalid("batch_size and epochs must be positive"));
        }
        if !(self.learning_rate_multiplier > 0.0 && self.learning_rate_multiplier.is_finite()) {
            return Err(GatewayError::invalid("learning_rate_multiplier must be positive"));
        }
        if !(self.prompt_loss_weight >= 0.0 && self.prompt_loss_weight.is_finite()) {
            return Err(GatewayError::invalid("prompt_loss_weight must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobHandle(pub String);

impl std::fmt::Display for JobHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded { validation_loss: f64 },
    Failed { reason: String },
}

impl JobStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, JobStatus::Succeeded { .. } | JobStatus::Failed { .. })
    }
}
