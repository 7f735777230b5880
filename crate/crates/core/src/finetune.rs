//! Finetuning data: dataset export, cross-validation folds, the
//! hyperparameter grid and sweep result tables.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{FinetuneExample, RefinementBatch, TaskInput};
use crate::error::{Error, Result};
use crate::prompts::TemplateSet;

pub const DEFAULT_BATCH_SIZE: u32 = 256;
pub const DEFAULT_EPOCHS: u32 = 4;
pub const DEFAULT_FOLDS: usize = 5;
pub const LEARNING_RATE_MULTIPLIERS: [f64; 6] = [0.005, 0.01, 0.025, 0.05, 0.1, 0.2];
pub const PROMPT_LOSS_WEIGHTS: [f64; 5] = [0.01, 0.025, 0.05, 0.1, 0.2];

impl FinetuneExample {
    /// Builds an example whose completion starts with exactly one space.
    pub fn new(prompt: impl Into<String>, completion: &str) -> Self {
        FinetuneExample {
            prompt: prompt.into(),
            completion: format!(" {}", completion.trim_start()),
        }
    }

    pub fn violations(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.prompt.is_empty() || self.completion.trim().is_empty() {
            out.push("both nonempty");
        }
        let mut chars = self.completion.chars();
        if chars.next() != Some(' ') || chars.next().is_some_and(char::is_whitespace) {
            out.push("completion begins with a single leading space");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate_multiplier: f64,
    pub prompt_loss_weight: f64,
}

impl HyperParams {
    pub fn new(learning_rate_multiplier: f64, prompt_loss_weight: f64) -> Self {
        HyperParams {
            learning_rate_multiplier,
            prompt_loss_weight,
        }
    }

    fn lexicographic(&self, other: &Self) -> std::cmp::Ordering {
        self.learning_rate_multiplier
            .total_cmp(&other.learning_rate_multiplier)
            .then(self.prompt_loss_weight.total_cmp(&other.prompt_loss_weight))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub learning_rate_multipliers: Vec<f64>,
    pub prompt_loss_weights: Vec<f64>,
    pub batch_size: u32,
    pub epochs: u32,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            learning_rate_multipliers: LEARNING_RATE_MULTIPLIERS.to_vec(),
            prompt_loss_weights: PROMPT_LOSS_WEIGHTS.to_vec(),
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        fn distinct(values: &[f64]) -> bool {
            let set: BTreeSet<u64> = values.iter().map(|v| v.to_bits()).collect();
            set.len() == values.len()
        }
        let lr = &self.learning_rate_multipliers;
        let plw = &self.prompt_loss_weights;
        if lr.is_empty() || plw.is_empty() {
            return Err(Error::invalid("sweep grid lists must be nonempty"));
        }
        if !distinct(lr) || !distinct(plw) {
            return Err(Error::invalid("sweep grid values must be distinct"));
        }
        if lr.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("learning rate multipliers must be positive"));
        }
        if plw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("prompt loss weights must be nonnegative"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be positive"));
        }
        Ok(())
    }

    /// Cartesian product, learning rate outermost.
    pub fn points(&self) -> Vec<HyperParams> {
        self.learning_rate_multipliers
            .iter()
            .flat_map(|&lr| {
                self.prompt_loss_weights
                    .iter()
                    .map(move |&plw| HyperParams::new(lr, plw))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvFold {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
}

/// Seeded shuffle, then `k` contiguous validation blocks whose sizes differ
/// by at most one. Training ids keep the shuffled order.
pub fn make_cv_folds(corpus_ids: &[String], k: usize, seed: u64) -> Result<Vec<CvFold>> {
    if k < 2 {
        return Err(Error::invalid("cross-validation needs k >= 2"));
    }
    if corpus_ids.len() < k {
        return Err(Error::invalid(format!(
            "cannot split {} ids into {k} folds",
            corpus_ids.len()
        )));
    }
    let unique: BTreeSet<&String> = corpus_ids.iter().collect();
    if unique.len() != corpus_ids.len() {
        return Err(Error::invalid("corpus ids must be unique"));
    }
    let mut ids = corpus_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for fold_index in 0..k {
        let len = base + usize::from(fold_index < extra);
        let end = start + len;
        folds.push(CvFold {
            fold_index,
            validation_ids: ids[start..end].to_vec(),
            train_ids: ids[..start].iter().chain(&ids[end..]).cloned().collect(),
        });
        start = end;
    }
    Ok(folds)
}

/// One example per batch: the initial-summary prompt for the batch's task and
/// the selected refinement as completion. Ordered by task id, then batch id.
pub fn export_dataset(
    batches: &[RefinementBatch],
    tasks: &[TaskInput],
    templates: &TemplateSet,
) -> Result<Vec<FinetuneExample>> {
    let by_id: HashMap<&str, &TaskInput> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut ordered: Vec<&RefinementBatch> = batches.iter().collect();
    ordered.sort_by(|a, b| a.task_id.cmp(&b.task_id).then(a.batch_id.cmp(&b.batch_id)));
    ordered
        .into_iter()
        .map(|batch| {
            let task = by_id.get(batch.task_id.as_str()).ok_or_else(|| Error::Unknown {
                what: "task",
                id: batch.task_id.clone(),
            })?;
            let selected = batch.selected().ok_or_else(|| {
                Error::invalid(format!("batch `{}` has no selected candidate", batch.batch_id))
            })?;
            let prompt = templates.render_initial_summary(task)?;
            Ok(FinetuneExample::new(prompt.text, &selected.text))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointResult {
    pub params: HyperParams,
    /// Validation loss per fold; `None` where the job failed.
    pub fold_losses: Vec<Option<f64>>,
    pub mean_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl GridPointResult {
    pub fn from_losses(params: HyperParams, fold_losses: Vec<Option<f64>>, failure: Option<String>) -> Self {
        let complete: Option<Vec<f64>> = fold_losses.iter().copied().collect();
        let mean_loss = match (&failure, complete) {
            (None, Some(l)) if !l.is_empty() => Some(l.iter().sum::<f64>() / l.len() as f64),
            _ => None,
        };
        GridPointResult {
            params,
            fold_losses,
            mean_loss,
            failure,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.mean_loss.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best: HyperParams,
    pub best_mean_loss: f64,
    pub table: Vec<GridPointResult>,
}

/// Minimal mean loss among valid points; ties go to the lexicographically
/// smallest (learning rate multiplier, prompt loss weight).
pub fn best_point(table: &[GridPointResult]) -> Option<(HyperParams, f64)> {
    table
        .iter()
        .filter_map(|r| r.mean_loss.map(|m| (r.params, m)))
        .min_by(|(pa, ma), (pb, mb)| ma.total_cmp(mb).then(pa.lexicographic(pb)))
}
