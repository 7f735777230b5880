//! Record persistence: a read-only corpus (tasks, outputs, batches) plus
//! append-only logs for annotations, indexed in memory at startup.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use feedloop_core::analytics::{IncorporationJudgment, RankingRecord, INITIAL_SUMMARY_TAG};
use feedloop_core::store::{read_records, RecordKind, RecordLog};
use feedloop_core::{Error, FeedbackRecord, GeneratedOutput, RefinementBatch, TaskInput};

/// Everything annotators look at. Loaded once; never written by the service.
#[derive(Debug, Default)]
pub struct Corpus {
    pub tasks: BTreeMap<String, TaskInput>,
    pub outputs: HashMap<String, GeneratedOutput>,
    /// Per task, the text shown for each method tag: selected batch
    /// candidates by strategy, then outputs by their own method tag.
    pub method_texts: HashMap<String, BTreeMap<String, String>>,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self, Error> {
        let tasks: Vec<TaskInput> = read_records(&RecordKind::Tasks.path_in(dir))?;
        let outputs: Vec<GeneratedOutput> = read_records(&RecordKind::Outputs.path_in(dir))?;
        let batches: Vec<RefinementBatch> = read_records(&RecordKind::Batches.path_in(dir))?;
        Ok(Self::from_records(tasks, outputs, batches))
    }

    pub fn from_records(tasks: Vec<TaskInput>, outputs: Vec<GeneratedOutput>, batches: Vec<RefinementBatch>) -> Self {
        let mut method_texts: HashMap<String, BTreeMap<String, String>> = HashMap::new();
        for o in &outputs {
            if let Some(m) = &o.method_tag {
                method_texts
                    .entry(o.task_id.clone())
                    .or_default()
                    .entry(m.clone())
                    .or_insert_with(|| o.text.clone());
            }
        }
        for b in &batches {
            if let Some(sel) = b.selected() {
                method_texts
                    .entry(b.task_id.clone())
                    .or_default()
                    .insert(b.strategy.to_string(), sel.text.clone());
            }
        }
        Corpus {
            tasks: tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect(),
            outputs: outputs.into_iter().map(|o| (o.output_id.clone(), o)).collect(),
            method_texts,
        }
    }

    /// Initial summaries in task order.
    pub fn initial_outputs(&self) -> Vec<&GeneratedOutput> {
        let mut v: Vec<&GeneratedOutput> = self
            .outputs
            .values()
            .filter(|o| o.method_tag.as_deref() == Some(INITIAL_SUMMARY_TAG) && self.tasks.contains_key(&o.task_id))
            .collect();
        v.sort_by(|a, b| a.task_id.cmp(&b.task_id).then(a.output_id.cmp(&b.output_id)));
        v
    }

    pub fn initial_for(&self, task_id: &str) -> Option<&GeneratedOutput> {
        self.initial_outputs().into_iter().find(|o| o.task_id == task_id)
    }

    pub fn method_text(&self, task_id: &str, method: &str) -> Option<&str> {
        self.method_texts.get(task_id)?.get(method).map(String::as_str)
    }
}

#[derive(Debug, Default)]
pub struct Index {
    pub feedback: HashMap<String, FeedbackRecord>,
    /// (annotator_id, output_id)
    pub feedback_pairs: HashSet<(String, String)>,
    /// (evaluator_id, item_id)
    pub ranked: HashSet<(String, String)>,
    pub ranking_count: usize,
    /// (item_id, method_tag)
    pub judged: HashSet<(String, String)>,
}

impl Index {
    pub fn feedback_for_output(&self, output_id: &str) -> Option<&FeedbackRecord> {
        let mut matches: Vec<&FeedbackRecord> = self.feedback.values().filter(|f| f.output_id == output_id).collect();
        matches.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.feedback_id.cmp(&b.feedback_id)));
        matches.first().copied()
    }
}

struct Logs {
    feedback: RecordLog<FeedbackRecord>,
    rankings: RecordLog<RankingRecord>,
    judgments: RecordLog<IncorporationJudgment>,
}

/// Submissions serialize through `logs`; the index is updated while the
/// log lock is held, so checks and appends are atomic together.
pub struct Store {
    dir: PathBuf,
    pub corpus: Corpus,
    index: RwLock<Index>,
    logs: Mutex<Logs>,
}

pub enum Rejection {
    Duplicate(String),
    Invalid(String),
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self, Error> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let corpus = Corpus::load(dir)?;
        let logs = Logs {
            feedback: RecordLog::open(RecordKind::Feedback.path_in(dir))?,
            rankings: RecordLog::open(RecordKind::Rankings.path_in(dir))?,
            judgments: RecordLog::open(RecordKind::Judgments.path_in(dir))?,
        };
        let mut index = Index::default();
        for f in logs.feedback.read_all()? {
            index.feedback_pairs.insert((f.annotator_id.clone(), f.output_id.clone()));
            index.feedback.insert(f.feedback_id.clone(), f);
        }
        for r in logs.rankings.read_all()? {
            if let Some(v) = r.violations().first() {
                return Err(Error::Invalid(format!("stored ranking for `{}` violates {v}", r.item_id)));
            }
            index.ranked.insert((r.evaluator_id, r.item_id));
            index.ranking_count += 1;
        }
        for j in logs.judgments.read_all()? {
            if let Some(v) = j.violations().first() {
                return Err(Error::Invalid(format!("stored judgment for `{}` violates {v}", j.item_id)));
            }
            index.judged.insert((j.item_id, j.method_tag));
        }
        Ok(Store {
            dir: dir.to_path_buf(),
            corpus,
            index: RwLock::new(index),
            logs: Mutex::new(logs),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn read_index<T>(&self, f: impl FnOnce(&Index) -> T) -> T {
        f(&self.index.read().unwrap())
    }

    /// Appends feedback, assigning the next free `fb-NNNNNN` id.
    pub fn add_feedback(
        &self,
        task_id: &str,
        output_id: &str,
        annotator_id: &str,
        text: &str,
        created_at: feedloop_core::Timestamp,
    ) -> Result<Result<FeedbackRecord, Rejection>, Error> {
        let mut logs = self.logs.lock().unwrap();
        let pair = (annotator_id.to_string(), output_id.to_string());
        let id = {
            let index = self.index.read().unwrap();
            if index.feedback_pairs.contains(&pair) {
                return Ok(Err(Rejection::Duplicate(format!(
                    "annotator `{annotator_id}` already wrote feedback on `{output_id}`"
                ))));
            }
            let mut n = index.feedback.len() + 1;
            while index.feedback.contains_key(&format!("fb-{n:06}")) {
                n += 1;
            }
            format!("fb-{n:06}")
        };
        let record = FeedbackRecord {
            feedback_id: id,
            task_id: task_id.to_string(),
            output_id: output_id.to_string(),
            text: text.to_string(),
            annotator_id: annotator_id.to_string(),
            created_at,
        };
        logs.feedback.append(&record)?;
        let mut index = self.index.write().unwrap();
        index.feedback_pairs.insert(pair);
        index.feedback.insert(record.feedback_id.clone(), record.clone());
        Ok(Ok(record))
    }

    pub fn add_ranking(&self, record: &RankingRecord) -> Result<Result<(), Rejection>, Error> {
        if let Some(v) = record.violations().first() {
            return Ok(Err(Rejection::Invalid(v.to_string())));
        }
        let mut logs = self.logs.lock().unwrap();
        let key = (record.evaluator_id.clone(), record.item_id.clone());
        if self.index.read().unwrap().ranked.contains(&key) {
            return Ok(Err(Rejection::Duplicate(format!(
                "`{}` already ranked item `{}`",
                record.evaluator_id, record.item_id
            ))));
        }
        logs.rankings.append(record)?;
        let mut index = self.index.write().unwrap();
        index.ranked.insert(key);
        index.ranking_count += 1;
        Ok(Ok(()))
    }

    pub fn add_judgment(&self, judgment: &IncorporationJudgment) -> Result<Result<(), Rejection>, Error> {
        if let Some(v) = judgment.violations().first() {
            return Ok(Err(Rejection::Invalid(v.to_string())));
        }
        let mut logs = self.logs.lock().unwrap();
        let key = (judgment.item_id.clone(), judgment.method_tag.clone());
        if self.index.read().unwrap().judged.contains(&key) {
            return Ok(Err(Rejection::Duplicate(format!(
                "`{}` on item `{}` is already judged",
                judgment.method_tag, judgment.item_id
            ))));
        }
        logs.judgments.append(judgment)?;
        self.index.write().unwrap().judged.insert(key);
        Ok(Ok(()))
    }
}
