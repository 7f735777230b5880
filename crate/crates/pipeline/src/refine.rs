//! Sampling, scoring and selection of refinements for one task at a time.

use std::collections::HashMap;

use futures::future::join_all;
use sha2::{Digest, Sha256};

use feedloop_core::analytics::INITIAL_SUMMARY_TAG;
use feedloop_core::prompts::TemplateSet;
use feedloop_core::selection::{cosine_similarity, postprocess_summary, select, ScoredCandidate};
use feedloop_core::{
    DecodingParams, FeedbackRecord, GeneratedOutput, Producer, RefinementBatch, Strategy, TaskInput, Timestamp,
    DEFAULT_CANDIDATES,
};
use feedloop_gateway::{CompletionRequest, Gateway};

use crate::error::{PipelineError, Result};

/// Stable per-task seed so tasks draw different samples under one run seed.
pub fn task_seed(seed: u64, task_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(task_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[derive(Debug, Clone)]
pub struct Refiner {
    gateway: Gateway,
    templates: TemplateSet,
    pub n: usize,
    pub decoding: DecodingParams,
    /// Stamped on every generated output; fixed stamps make runs
    /// byte-reproducible.
    pub created_at: Timestamp,
}

impl Refiner {
    pub fn new(gateway: Gateway) -> Self {
        Refiner {
            gateway,
            templates: TemplateSet::default(),
            n: DEFAULT_CANDIDATES,
            decoding: DecodingParams::summarization(),
            created_at: Timestamp::now(),
        }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_candidates(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_created_at(mut self, at: Timestamp) -> Self {
        self.created_at = at;
        self
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    fn output(&self, task: &TaskInput, id: String, method: &str, raw: &str) -> Option<GeneratedOutput> {
        let post = postprocess_summary(raw);
        if post.text.is_empty() {
            return None;
        }
        Some(GeneratedOutput {
            output_id: id,
            task_id: task.task_id.clone(),
            text: post.text,
            producer: Producer::Model,
            model_tag: Some(self.gateway.model_tag().to_string()),
            method_tag: Some(method.to_string()),
            decoding: Some(self.decoding.clone()),
            created_at: self.created_at,
            quality_flags: post.flag.into_iter().collect(),
        })
    }

    /// The baseline summary a human annotator writes feedback on.
    pub async fn generate_initial(&self, task: &TaskInput, seed: u64) -> Result<GeneratedOutput> {
        let prompt = self.templates.render_initial_summary(task)?;
        let req = CompletionRequest::new(prompt.text, self.decoding.clone()).seed(task_seed(seed, &task.task_id));
        let raw = self.gateway.complete(&req).await?.remove(0);
        let id = format!("{}:{INITIAL_SUMMARY_TAG}", task.task_id);
        self.output(task, id, INITIAL_SUMMARY_TAG, &raw)
            .ok_or_else(|| PipelineError::IncompleteBatch {
                task_id: task.task_id.clone(),
                requested: 1,
                succeeded: 0,
                reasons: vec!["empty initial summary".into()],
            })
    }

    /// `n` post-processed candidates. Any failed or empty candidate makes the
    /// whole batch incomplete.
    pub async fn sample_refinements(
        &self,
        task: &TaskInput,
        initial: &GeneratedOutput,
        feedback: Option<&FeedbackRecord>,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Vec<GeneratedOutput>> {
        if self.n == 0 {
            return Err(PipelineError::Invalid("number of candidates must be at least 1".into()));
        }
        let prompt = if strategy.uses_feedback() {
            let fb = feedback.ok_or_else(|| PipelineError::MissingFeedback {
                task_id: task.task_id.clone(),
                strategy: strategy.to_string(),
            })?;
            self.templates.render_refinement_with_feedback(task, initial, fb)?
        } else {
            self.templates.render_refinement_without_feedback(task, initial)?
        };
        let req = CompletionRequest::new(prompt.text, self.decoding.clone())
            .samples(self.n)
            .seed(task_seed(seed, &task.task_id));
        let results = self.gateway.complete_each(&req).await?;
        let mut out = Vec::with_capacity(self.n);
        let mut reasons = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            let id = format!("{}:{}:{i:02}", task.task_id, strategy);
            match r.map(|raw| self.output(task, id, strategy.as_str(), &raw)) {
                Ok(Some(o)) => out.push(o),
                Ok(None) => reasons.push(format!("candidate {i} empty after post-processing")),
                Err(e) => reasons.push(format!("candidate {i}: {e}")),
            }
        }
        if !reasons.is_empty() {
            return Err(PipelineError::IncompleteBatch {
                task_id: task.task_id.clone(),
                requested: self.n,
                succeeded: out.len(),
                reasons,
            });
        }
        Ok(out)
    }

    /// Cosine similarity of each candidate with the feedback. The feedback is
    /// embedded once.
    pub async fn score_refinements(
        &self,
        feedback: &FeedbackRecord,
        candidates: &[GeneratedOutput],
    ) -> Result<Vec<ScoredCandidate>> {
        if candidates.is_empty() {
            return Err(PipelineError::Invalid("no candidates to score".into()));
        }
        let target = self.gateway.embed(&feedback.text).await?;
        let embedded = join_all(candidates.iter().map(|c| self.gateway.embed(&c.text))).await;
        embedded
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                let wrap = |source: PipelineError| PipelineError::Scoring {
                    index: i,
                    source: Box::new(source),
                };
                let v = e.map_err(|e| wrap(e.into()))?;
                let score = cosine_similarity(&target, &v).map_err(|e| wrap(e.into()))?;
                Ok(ScoredCandidate {
                    candidate_index: i,
                    score: Some(score),
                })
            })
            .collect()
    }

    pub async fn refine_task(
        &self,
        task: &TaskInput,
        initial: &GeneratedOutput,
        feedback: Option<&FeedbackRecord>,
        strategy: Strategy,
        seed: u64,
    ) -> Result<RefinementBatch> {
        let feedback = if strategy.uses_feedback() { feedback } else { None };
        let candidates = self.sample_refinements(task, initial, feedback, strategy, seed).await?;
        let scores = match (strategy, feedback) {
            (Strategy::BestOfN, Some(fb)) => Some(
                self.score_refinements(fb, &candidates)
                    .await?
                    .into_iter()
                    .map(|s| s.score.expect("scored"))
                    .collect::<Vec<f64>>(),
            ),
            _ => None,
        };
        let selected_index = select(
            strategy,
            candidates.len(),
            scores.as_deref(),
            Some(task_seed(seed ^ 0x005e_1ec7, &task.task_id)),
        )?;
        Ok(RefinementBatch {
            batch_id: format!("{}:{}", task.task_id, strategy),
            task_id: task.task_id.clone(),
            initial_output_id: initial.output_id.clone(),
            feedback_id: feedback.map(|f| f.feedback_id.clone()),
            candidates,
            scores,
            selected_index,
            strategy,
        })
    }
}

#[derive(Debug, Default)]
pub struct CorpusRefinement {
    pub batches: Vec<RefinementBatch>,
    /// Tasks that produced no batch, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Refines every task that has an initial summary (and feedback, when the
/// strategy needs it). Tasks run concurrently under the gateway's bound;
/// batches come back in task order.
pub async fn refine_corpus(
    refiner: &Refiner,
    tasks: &[TaskInput],
    initials: &[GeneratedOutput],
    feedback: &[FeedbackRecord],
    strategy: Strategy,
    seed: u64,
) -> CorpusRefinement {
    let initial_by_task: HashMap<&str, &GeneratedOutput> = initials
        .iter()
        .filter(|o| o.method_tag.as_deref().map_or(true, |m| m == INITIAL_SUMMARY_TAG))
        .map(|o| (o.task_id.as_str(), o))
        .collect();
    let feedback_by_output: HashMap<&str, &FeedbackRecord> =
        feedback.iter().map(|f| (f.output_id.as_str(), f)).collect();

    let jobs = tasks.iter().map(|task| async {
        let Some(initial) = initial_by_task.get(task.task_id.as_str()) else {
            return Err("no initial summary".to_string());
        };
        let fb = feedback_by_output.get(initial.output_id.as_str()).copied();
        refiner
            .refine_task(task, initial, fb, strategy, seed)
            .await
            .map_err(|e| e.to_string())
    });
    let mut result = CorpusRefinement::default();
    for (task, outcome) in tasks.iter().zip(join_all(jobs).await) {
        match outcome {
            Ok(batch) => result.batches.push(batch),
            Err(reason) => {
                tracing::warn!(task = %task.task_id, %reason, "task skipped");
                result.skipped.push((task.task_id.clone(), reason));
            }
        }
    }
    result
}
