use async_trait::async_trait;

use feedloop_core::{DecodingParams, EmbeddingVector};

use crate::error::Result;
use crate::types::{FinetuneJobSpec, JobHandle, JobStatus};

/// One provider. Implementations handle a single sample per call; fan-out,
/// retries and stop-sequence truncation live in [`crate::Gateway`].
#[async_trait]
pub trait Backend: Send + Sync {
    /// Identifies the model behind completions, recorded on outputs.
    fn model_tag(&self) -> &str;

    async fn complete_one(
        &self,
        prompt: &str,
        decoding: &DecodingParams,
        seed: Option<u64>,
        sample_index: usize,
    ) -> Result<String>;

    async fn embed(&self, text: &str) -> Result<EmbeddingVector>;

    async fn submit_finetune(&self, spec: &FinetuneJobSpec) -> Result<JobHandle>;

    async fn poll_finetune(&self, handle: &JobHandle) -> Result<JobStatus>;
}
