//! Invariant checks for decoded records. Violations are data: each carries
//! the name of the broken invariant.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use crate::analytics::{IncorporationJudgment, RankingRecord};
use crate::domain::{
    DecodingMode, DecodingParams, EmbeddingVector, FeedbackRecord, FinetuneExample,
    GeneratedOutput, Producer, RefinementBatch, Strategy, TaskInput, DEFAULT_CANDIDATES,
};
use crate::selection::argmax_first;
use crate::word_removal::WordRemovalInstance;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

impl Violation {
    fn new(invariant: &'static str, detail: impl Into<String>) -> Self {
        Violation {
            invariant,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.detail.is_empty() {
            f.write_str(self.invariant)
        } else {
            write!(f, "{} ({})", self.invariant, self.detail)
        }
    }
}

/// What a record is checked against. Reference checks are skipped when the
/// corresponding id set is `None`.
#[derive(Debug, Clone)]
pub struct ValidationContext {
    pub candidates_per_batch: usize,
    pub task_ids: Option<HashSet<String>>,
    pub output_ids: Option<HashSet<String>>,
}

impl Default for ValidationContext {
    fn default() -> Self {
        ValidationContext {
            candidates_per_batch: DEFAULT_CANDIDATES,
            task_ids: None,
            output_ids: None,
        }
    }
}

impl ValidationContext {
    pub fn with_candidates(mut self, n: usize) -> Self {
        self.candidates_per_batch = n;
        self
    }

    pub fn with_tasks<'a>(mut self, ids: impl IntoIterator<Item = &'a str>) -> Self {
        self.task_ids = Some(ids.into_iter().map(str::to_string).collect());
        self
    }

    pub fn with_outputs<'a>(mut self, ids: impl IntoIterator<Item = &'a str>) -> Self {
        self.output_ids = Some(ids.into_iter().map(str::to_string).collect());
        self
    }

    fn knows_task(&self, id: &str) -> bool {
        self.task_ids.as_ref().is_none_or(|s| s.contains(id))
    }

    fn knows_output(&self, id: &str) -> bool {
        self.output_ids.as_ref().is_none_or(|s| s.contains(id))
    }
}

pub trait Validate {
    fn violations(&self, ctx: &ValidationContext) -> Vec<Violation>;
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, invariant: &str) -> bool {
        self.violations.iter().any(|v| v.invariant == invariant)
    }
}

pub fn validate_record<T: Validate + ?Sized>(record: &T, ctx: &ValidationContext) -> Validation {
    Validation {
        violations: record.violations(ctx),
    }
}

/// Corpus-level check: task ids are unique.
pub fn validate_corpus(tasks: &[TaskInput]) -> Validation {
    let mut seen = BTreeSet::new();
    let violations = tasks
        .iter()
        .filter(|t| !seen.insert(t.task_id.as_str()))
        .map(|t| Violation::new("task_id unique within a corpus", t.task_id.clone()))
        .collect();
    Validation { violations }
}

impl Validate for TaskInput {
    fn violations(&self, _ctx: &ValidationContext) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.task_id.trim().is_empty() {
            v.push(Violation::new("task_id nonempty", ""));
        }
        if self.body.trim().is_empty() {
            v.push(Violation::new("body nonempty", self.task_id.clone()));
        }
        v
    }
}

impl Validate for DecodingParams {
    fn violations(&self, _ctx: &ValidationContext) -> Vec<Violation> {
        let mut v = Vec::new();
        match (self.mode, self.top_p) {
            (DecodingMode::Greedy, Some(_)) => {
                v.push(Violation::new("mode=greedy implies top_p unused", ""))
            }
            (DecodingMode::Nucleus, None) => {
                v.push(Violation::new("top_p in (0,1] iff mode=nucleus", "missing"))
            }
            (DecodingMode::Nucleus, Some(p)) if !(p > 0.0 && p <= 1.0) => {
                v.push(Violation::new("top_p in (0,1] iff mode=nucleus", p.to_string()))
            }
            _ => {}
        }
        if self.max_tokens < 1 {
            v.push(Violation::new("max_tokens ≥ 1", ""));
        }
        v
    }
}

impl Validate for GeneratedOutput {
    fn violations(&self, ctx: &ValidationContext) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.text.trim().is_empty() {
            v.push(Violation::new("text nonempty", self.output_id.clone()));
        }
        match (&self.producer, &self.decoding) {
            (Producer::Human, Some(_)) => v.push(Violation::new(
                "producer=human implies decoding absent",
                self.output_id.clone(),
            )),
            (_, Some(d)) => v.extend(d.violations(ctx)),
            _ => {}
        }
        if !ctx.knows_task(&self.task_id) {
            v.push(Violation::new("references an existing task", self.task_id.clone()));
        }
        v
    }
}

impl Validate for FeedbackRecord {
    fn violations(&self, ctx: &ValidationContext) -> Vec<Violation> {
        let mut v = Vec::new();
        if !ctx.knows_task(&self.task_id) {
            v.push(Violation::new("references an existing task", self.task_id.clone()));
        }
        if !ctx.knows_output(&self.output_id) {
            v.push(Violation::new("references an existing output", self.output_id.clone()));
        }
        if self.text.trim().is_empty() {
            v.push(Violation::new("text nonempty", self.feedback_id.clone()));
        }
        v
    }
}

impl Validate for RefinementBatch {
    fn violations(&self, ctx: &ValidationContext) -> Vec<Violation> {
        let mut v = Vec::new();
        let n = self.candidates.len();
        if n != ctx.candidates_per_batch {
            v.push(Violation::new(
                "candidates length = configured N",
                format!("{n} != {}", ctx.candidates_per_batch),
            ));
        }
        if self.selected_index >= n {
            v.push(Violation::new(
                "selected_index in [0, N)",
                self.selected_index.to_string(),
            ));
        }
        if let Some(scores) = &self.scores {
            if scores.len() != n {
                v.push(Violation::new(
                    "scores aligned with candidates",
                    format!("{} scores, {n} candidates", scores.len()),
                ));
            }
        }
        match self.strategy {
            Strategy::BestOfN => match &self.scores {
                None => v.push(Violation::new(
                    "strategy=best_of_n implies scores present",
                    self.batch_id.clone(),
                )),
                Some(scores) => {
                    if argmax_first(scores) != Some(self.selected_index) {
                        v.push(Violation::new(
                            "selected_index ∈ argmax(scores) with lowest-index tie-break",
                            self.batch_id.clone(),
                        ));
                    }
                }
            },
            Strategy::WithoutFeedback if self.feedback_id.is_some() => v.push(Violation::new(
                "strategy=without_feedback implies feedback_id absent",
                self.batch_id.clone(),
            )),
            _ => {}
        }
        if !ctx.knows_task(&self.task_id) {
            v.push(Violation::new("references an existing task", self.task_id.clone()));
        }
        for c in &self.candidates {
            let child = ValidationContext {
                task_ids: None,
                ..ctx.clone()
            };
            v.extend(c.violations(&child));
            if c.task_id != self.task_id {
                v.push(Violation::new("candidates belong to the batch task", c.output_id.clone()));
            }
        }
        v
    }
}

impl Validate for EmbeddingVector {
    fn violations(&self, _ctx: &ValidationContext) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.values.len() != self.dim || self.dim == 0 {
            v.push(Violation::new(
                "length(values) = dim",
                format!("{} values, dim {}", self.values.len(), self.dim),
            ));
        }
        let norm = self.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            v.push(Violation::new("Euclidean norm > 0", ""));
        }
        v
    }
}

impl Validate for RankingRecord {
    fn violations(&self, _ctx: &ValidationContext) -> Vec<Violation> {
        RankingRecord::violations(self)
            .into_iter()
            .map(|name| Violation::new(name, self.item_id.clone()))
            .collect()
    }
}

impl Validate for IncorporationJudgment {
    fn violations(&self, _ctx: &ValidationContext) -> Vec<Violation> {
        IncorporationJudgment::violations(self)
            .into_iter()
            .map(|name| Violation::new(name, self.item_id.clone()))
            .collect()
    }
}

impl Validate for WordRemovalInstance {
    fn violations(&self, _ctx: &ValidationContext) -> Vec<Violation> {
        WordRemovalInstance::violations(self)
            .into_iter()
            .map(|name| Violation::new(name, self.instance_id.clone()))
            .collect()
    }
}

impl Validate for FinetuneExample {
    fn violations(&self, _ctx: &ValidationContext) -> Vec<Violation> {
        FinetuneExample::violations(self)
            .into_iter()
            .map(|name| Violation::new(name, ""))
            .collect()
    }
}
