use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use feedloop_core::EmbeddingVector;

use crate::backend::Backend;
use crate::error::{GatewayError, Result};
use crate::types::{truncate_at_stop, CompletionRequest, FinetuneJobSpec, JobHandle, JobStatus};

pub const DEFAULT_CONCURRENCY: usize = 4;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            initial_backoff_ms: 250,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        RetryPolicy {
            initial_backoff_ms: 0,
            ..Self::default()
        }
    }

    /// Delay before attempt `attempt + 1`, counting from zero.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(attempt as i32);
        Duration::from_millis(ms.min(60_000.0) as u64)
    }
}

/// Shared front for a [`Backend`]: bounds in-flight requests, retries
/// retryable failures, and enforces the output contracts.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    permits: Arc<Semaphore>,
    retry: RetryPolicy,
    embedding_dim: Arc<Mutex<Option<usize>>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("model", &self.backend.model_tag())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Gateway {
            backend,
            permits: Arc::new(Semaphore::new(DEFAULT_CONCURRENCY)),
            retry: RetryPolicy::default(),
            embedding_dim: Arc::new(Mutex::new(None)),
        }
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.permits = Arc::new(Semaphore::new(limit.max(1)));
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Pins the embedding dimension; otherwise the first response pins it.
    pub fn with_embedding_dim(self, dim: usize) -> Self {
        *self.embedding_dim.lock().unwrap() = Some(dim);
        self
    }

    pub fn model_tag(&self) -> &str {
        self.backend.model_tag()
    }

    /// One result per sample, in sample order.
    pub async fn complete_each(&self, req: &CompletionRequest) -> Result<Vec<Result<String>>> {
        req.check()?;
        let calls = (0..req.n_samples).map(|i| async move {
            let text = self
                .call(|| self.backend.complete_one(&req.prompt, &req.decoding, req.seed, i))
                .await?;
            Ok(truncate_at_stop(&text, &req.decoding.stop_sequences))
        });
        Ok(join_all(calls).await)
    }

    /// Exactly `n_samples` texts, or [`GatewayError::Incomplete`].
    pub async fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>> {
        let results = self.complete_each(req).await?;
        let requested = results.len();
        let mut texts = Vec::with_capacity(requested);
        let mut first_error = None;
        for r in results {
            match r {
                Ok(t) => texts.push(t),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        match first_error {
            None => Ok(texts),
            Some(e) if requested == 1 => Err(e),
            Some(e) => Err(GatewayError::Incomplete {
                requested,
                succeeded: texts.len(),
                first_error: Box::new(e),
            }),
        }
    }

    pub async fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(GatewayError::invalid("cannot embed empty text"));
        }
        let v = self.call(|| self.backend.embed(text)).await?;
        if v.values.len() != v.dim {
            return Err(GatewayError::DimensionMismatch {
                expected: v.dim,
                actual: v.values.len(),
            });
        }
        let mut pinned = self.embedding_dim.lock().unwrap();
        match *pinned {
            Some(expected) if expected != v.dim => Err(GatewayError::DimensionMismatch {
                expected,
                actual: v.dim,
            }),
            _ => {
                *pinned = Some(v.dim);
                Ok(v)
            }
        }
    }

    pub async fn submit_finetune(&self, spec: &FinetuneJobSpec) -> Result<JobHandle> {
        spec.check()?;
        self.call(|| self.backend.submit_finetune(spec)).await
    }

    pub async fn poll_finetune(&self, handle: &JobHandle) -> Result<JobStatus> {
        self.call(|| self.backend.poll_finetune(handle)).await
    }

    async fn call<'a, T, F, Fut>(&'a self, mut f: F) -> Result<T>
    where
        F: FnMut() -> Fut + 'a,
        Fut: std::future::Future<Output = Result<T>> + 'a,
    {
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            let outcome = {
                let _permit = self.permits.acquire().await.expect("semaphore never closed");
                f().await
            };
            match outcome {
                Err(e) if e.is_retryable() && attempt + 1 < attempts => {
                    tracing::debug!(attempt, error = %e, "retrying");
                    tokio::time::sleep(self.retry.backoff(attempt)).await;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
