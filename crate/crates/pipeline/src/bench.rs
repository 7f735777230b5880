//! Queries a backend on word-removal instances.

use std::collections::BTreeMap;

use futures::future::join_all;
use serde::{Deserialize, Serialize};

use feedloop_core::prompts::TemplateSet;
use feedloop_core::word_removal::WordRemovalInstance;
use feedloop_core::DecodingParams;
use feedloop_gateway::{CompletionRequest, Gateway};

use crate::error::Result;

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub completion: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchRun {
    pub predictions: Vec<Prediction>,
    /// Instances the backend failed on; they score as misses.
    pub failures: BTreeMap<String, String>,
}

impl BenchRun {
    pub fn prediction_map(&self) -> BTreeMap<String, String> {
        self.predictions
            .iter()
            .map(|p| (p.instance_id.clone(), p.completion.clone()))
            .collect()
    }
}

/// Greedy decoding to 200 tokens or a newline, one request per instance.
pub async fn run_benchmark(
    gateway: &Gateway,
    templates: &TemplateSet,
    instances: &[WordRemovalInstance],
) -> Result<BenchRun> {
    let prompts = instances
        .iter()
        .map(|i| templates.render_word_removal(&i.sentence, &i.words_to_remove, &i.completion_prefix))
        .collect::<feedloop_core::Result<Vec<_>>>()?;
    let decoding = DecodingParams::word_removal();
    let calls = prompts.into_iter().map(|p| {
        let req = CompletionRequest::new(p.text, decoding.clone());
        async move { gateway.complete(&req).await }
    });
    let mut run = BenchRun::default();
    for (inst, outcome) in instances.iter().zip(join_all(calls).await) {
        match outcome {
            Ok(mut texts) => run.predictions.push(Prediction {
                instance_id: inst.instance_id.clone(),
                completion: texts.remove(0),
            }),
            Err(e) => {
                run.failures.insert(inst.instance_id.clone(), e.to_string());
            }
        }
    }
    Ok(run)
}
