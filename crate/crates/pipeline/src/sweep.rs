//! Cross-validated hyperparameter sweep. A single coordinator owns the job
//! table; workers submit and poll one job each and report back over a
//! channel. The table is checkpointed after every transition, so an
//! interrupted sweep resumes where it stopped.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::mpsc;

use feedloop_core::finetune::{
    best_point, CvFold, GridPointResult, HyperParams, SweepGrid, SweepResult,
};
use feedloop_core::FinetuneExample;
use feedloop_gateway::{FinetuneJobSpec, Gateway, GatewayError, JobHandle, JobStatus};

use crate::error::{PipelineError, Result};

pub const DEFAULT_PARALLELISM: usize = 2;

/// Ids used for cross-validation: the zero-based position of each example
/// in the dataset.
pub fn example_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub parallelism: usize,
    pub poll_interval: Duration,
    pub checkpoint: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            parallelism: DEFAULT_PARALLELISM,
            poll_interval: Duration::from_secs(30),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Submitted { handle: JobHandle },
    Succeeded { handle: JobHandle, validation_loss: f64 },
    Failed { reason: String },
}

impl JobState {
    fn is_terminal(&self) -> bool {
        matches!(self, JobState::Succeeded { .. } | JobState::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepJob {
    pub point_index: usize,
    pub fold_index: usize,
    pub params: HyperParams,
    pub state: JobState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepState {
    /// Hash of dataset, grid and folds; a checkpoint is only
    /// resumed for the identical sweep.
    pub fingerprint: String,
    pub grid: SweepGrid,
    pub jobs: Vec<SweepJob>,
    pub submissions: usize,
}

impl SweepState {
    fn new(fingerprint: String, grid: &SweepGrid, n_folds: usize) -> Self {
        let jobs = grid
            .points()
            .into_iter()
            .enumerate()
            .flat_map(|(point_index, params)| {
                (0..n_folds).map(move |fold_index| SweepJob {
                    point_index,
                    fold_index,
                    params,
                    state: JobState::Pending,
                })
            })
            .collect();
        SweepState {
            fingerprint,
            grid: grid.clone(),
            jobs,
            submissions: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Option<Self>> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| PipelineError::Checkpoint {
                path: path.to_path_buf(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(PipelineError::io(path, e)),
        }
    }

    /// Writes through a temporary file and a rename, so a crash never
    /// leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        let text = serde_json::to_string_pretty(self).map_err(feedloop_core::Error::from)?;
        std::fs::write(&tmp, text).map_err(|e| PipelineError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
    }

    /// Per-point results in grid order. A point with any failed fold is
    /// invalid and carries the first failure reason.
    pub fn table(&self, n_folds: usize) -> Vec<GridPointResult> {
        type Row = (HyperParams, Vec<Option<f64>>, Option<String>);
        let mut by_point: BTreeMap<usize, Row> = BTreeMap::new();
        for job in &self.jobs {
            let entry = by_point
                .entry(job.point_index)
                .or_insert_with(|| (job.params, vec![None; n_folds], None));
            match &job.state {
                JobState::Succeeded { validation_loss, .. } => entry.1[job.fold_index] = Some(*validation_loss),
                JobState::Failed { reason } => {
                    entry.2.get_or_insert_with(|| format!("fold {}: {reason}", job.fold_index));
                }
                JobState::Pending | JobState::Submitted { .. } => {
                    entry.2.get_or_insert_with(|| format!("fold {}: unfinished", job.fold_index));
                }
            }
        }
        by_point
            .into_values()
            .map(|(params, losses, failure)| GridPointResult::from_losses(params, losses, failure))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub result: SweepResult,
    /// Jobs submitted during this call; resumed sweeps submit fewer.
    pub submitted_now: usize,
    /// Grid points left out of selection, with the reason.
    pub excluded: Vec<(HyperParams, String)>,
}

fn check_folds(n_examples: usize, folds: &[CvFold]) -> Result<()> {
    if folds.is_empty() {
        return Err(PipelineError::Invalid("no folds".into()));
    }
    let ids: HashSet<String> = example_ids(n_examples).into_iter().collect();
    let mut seen = HashSet::new();
    for (i, f) in folds.iter().enumerate() {
        if f.fold_index != i {
            return Err(PipelineError::Invalid(format!("fold {i} has index {}", f.fold_index)));
        }
        if f.train_ids.is_empty() || f.validation_ids.is_empty() {
            return Err(PipelineError::Invalid(format!("fold {i} has an empty split")));
        }
        for id in f.train_ids.iter().chain(&f.validation_ids) {
            if !ids.contains(id) {
                return Err(PipelineError::Invalid(format!("fold {i} names unknown example `{id}`")));
            }
        }
        for id in &f.validation_ids {
            if !seen.insert(id) {
                return Err(PipelineError::Invalid(format!("example `{id}` validates in two folds")));
            }
        }
    }
    if seen.len() != n_examples {
        return Err(PipelineError::Invalid("validation sets do not cover the dataset".into()));
    }
    Ok(())
}

fn fingerprint(examples: &[FinetuneExample], grid: &SweepGrid, folds: &[CvFold]) -> String {
    let mut h = Sha256::new();
    let parts = serde_json::json!({
        "examples": examples,
        "grid": grid,
        "folds": folds,
    });
    h.update(parts.to_string().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

enum Report {
    Submitted { job: usize, handle: JobHandle },
    Finished { job: usize, state: JobState },
}

async fn work(
    gateway: Gateway,
    job: usize,
    spec: FinetuneJobSpec,
    mut handle: Option<JobHandle>,
    poll_interval: Duration,
    tx: mpsc::UnboundedSender<Report>,
) {
    let finished = |state| Report::Finished { job, state };
    let mut resubmitted = false;
    loop {
        let h = match handle.take() {
            Some(h) => h,
            None => match gateway.submit_finetune(&spec).await {
                Ok(h) => {
                    let _ = tx.send(Report::Submitted { job, handle: h.clone() });
                    h
                }
                Err(e) => {
                    let _ = tx.send(finished(JobState::Failed { reason: e.to_string() }));
                    return;
                }
            },
        };
        loop {
            match gateway.poll_finetune(&h).await {
                Ok(JobStatus::Succeeded { validation_loss }) => {
                    let _ = tx.send(finished(JobState::Succeeded {
                        handle: h,
                        validation_loss,
                    }));
                    return;
                }
                Ok(JobStatus::Failed { reason }) => {
                    let _ = tx.send(finished(JobState::Failed { reason }));
                    return;
                }
                Ok(JobStatus::Queued | JobStatus::Running) => tokio::time::sleep(poll_interval).await,
                // A checkpointed handle the provider no longer knows: submit
                // again, once.
                Err(GatewayError::UnknownJob(_)) if !resubmitted => {
                    resubmitted = true;
                    break;
                }
                Err(e) => {
                    let _ = tx.send(finished(JobState::Failed { reason: e.to_string() }));
                    return;
                }
            }
        }
    }
}

/// Runs every (grid point, fold) job and picks the point with minimal mean
/// validation loss.
pub async fn run_sweep(
    gateway: &Gateway,
    examples: &[FinetuneExample],
    grid: &SweepGrid,
    folds: &[CvFold],
    cfg: &SweepConfig,
) -> Result<SweepOutcome> {
    grid.validate()?;
    check_folds(examples.len(), folds)?;
    let fp = fingerprint(examples, grid, folds);
    let mut state = match cfg.checkpoint.as_deref().map(SweepState::load).transpose()?.flatten() {
        Some(s) if s.fingerprint == fp => s,
        Some(_) => {
            return Err(PipelineError::Checkpoint {
                path: cfg.checkpoint.clone().unwrap_or_default(),
                reason: "belongs to a different sweep".into(),
            })
        }
        None => SweepState::new(fp, grid, folds.len()),
    };
    let save = |s: &SweepState| match &cfg.checkpoint {
        Some(p) => s.save(p),
        None => Ok(()),
    };
    save(&state)?;

    let by_id: BTreeMap<String, &FinetuneExample> = example_ids(examples.len()).into_iter().zip(examples).collect();
    let pick = |ids: &[String]| -> Vec<FinetuneExample> { ids.iter().map(|id| by_id[id].clone()).collect() };
    let mut queue: VecDeque<usize> = (0..state.jobs.len()).filter(|&j| !state.jobs[j].state.is_terminal()).collect();
    let (tx, mut rx) = mpsc::unbounded_channel();
    let mut in_flight = 0;
    let mut submitted_now = 0;
    loop {
        while in_flight < cfg.parallelism.max(1) {
            let Some(j) = queue.pop_front() else { break };
            let job = &state.jobs[j];
            let fold = &folds[job.fold_index];
            let spec = FinetuneJobSpec {
                batch_size: grid.batch_size,
                epochs: grid.epochs,
                ..FinetuneJobSpec::new(pick(&fold.train_ids), job.params)
            }
            .with_validation(pick(&fold.validation_ids));
            let handle = match &job.state {
                JobState::Submitted { handle } => Some(handle.clone()),
                _ => None,
            };
            tokio::spawn(work(gateway.clone(), j, spec, handle, cfg.poll_interval, tx.clone()));
            in_flight += 1;
        }
        if in_flight == 0 {
            break;
        }
        match rx.recv().await.expect("a sender is alive while jobs are in flight") {
            Report::Submitted { job, handle } => {
                state.jobs[job].state = JobState::Submitted { handle };
                state.submissions += 1;
                submitted_now += 1;
            }
            Report::Finished { job, state: s } => {
                if let JobState::Failed { reason } = &s {
                    tracing::warn!(job, %reason, "finetune job failed");
                }
                state.jobs[job].state = s;
                in_flight -= 1;
            }
        }
        save(&state)?;
    }

    let table = state.table(folds.len());
    let excluded = table
        .iter()
        .filter(|r| !r.is_valid())
        .map(|r| (r.params, r.failure.clone().unwrap_or_default()))
        .collect();
    let (best, best_mean_loss) = best_point(&table).ok_or(PipelineError::NoValidGridPoint)?;
    Ok(SweepOutcome {
        result: SweepResult {
            best,
            best_mean_loss,
            table,
        },
        submitted_now,
        excluded,
    })
}
