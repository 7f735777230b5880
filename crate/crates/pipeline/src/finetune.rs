//! Dataset files and the final finetune over the full dataset.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use feedloop_core::finetune::{HyperParams, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};
use feedloop_core::{FinetuneExample, Timestamp};
use feedloop_gateway::{FinetuneJobSpec, Gateway, JobHandle};

use crate::error::{PipelineError, Result};

/// One `{"prompt": ..., "completion": ...}` object per line.
pub fn dataset_bytes(examples: &[FinetuneExample]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut out, ex).map_err(feedloop_core::Error::from)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, examples: &[FinetuneExample]) -> Result<()> {
    let bytes = dataset_bytes(examples)?;
    let mut f = std::fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<FinetuneExample>> {
    let examples: Vec<FinetuneExample> = feedloop_core::store::read_records(path)?;
    for (i, ex) in examples.iter().enumerate() {
        if let Some(v) = ex.violations().first() {
            return Err(PipelineError::Invalid(format!("{} line {}: {v}", path.display(), i + 1)));
        }
    }
    Ok(examples)
}

/// Persisted record of the final job, polled later by handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalJob {
    pub handle: JobHandle,
    pub params: HyperParams,
    pub batch_size: u32,
    pub epochs: u32,
    pub n_examples: usize,
    pub submitted_at: Timestamp,
}

/// Submits one job over all `examples` with the default batch size and
/// epochs, recording the handle at `record` when given.
pub async fn launch_final_finetune(
    gateway: &Gateway,
    examples: &[FinetuneExample],
    params: HyperParams,
    record: Option<&Path>,
) -> Result<FinalJob> {
    if examples.is_empty() {
        return Err(PipelineError::Invalid("cannot finetune on an empty dataset".into()));
    }
    let spec = FinetuneJobSpec::new(examples.to_vec(), params);
    let handle = gateway.submit_finetune(&spec).await?;
    let job = FinalJob {
        handle,
        params,
        batch_size: DEFAULT_BATCH_SIZE,
        epochs: DEFAULT_EPOCHS,
        n_examples: examples.len(),
        submitted_at: Timestamp::now(),
    };
    if let Some(path) = record {
        let text = serde_json::to_string_pretty(&job).map_err(feedloop_core::Error::from)?;
        std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))?;
    }
    Ok(job)
}
