//! In-memory annotation sessions. Sessions are cheap to recreate: their
//! queues derive from the persisted records and a seed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::store::{Corpus, Index};

/// Number of summaries in a ranking item, labelled A to E.
pub const RANKED_SUMMARIES: usize = 5;
pub const BLIND_LABELS: [&str; RANKED_SUMMARIES] = ["A", "B", "C", "D", "E"];
pub const HUMAN_SUMMARY_TAG: &str = "human_summary";

/// Methods ranked against each other when a session names none.
pub const DEFAULT_RANKING_METHODS: [&str; RANKED_SUMMARIES] =
    ["best_of_n", "random_of_n", "without_feedback", HUMAN_SUMMARY_TAG, "initial_summary"];
pub const DEFAULT_INCORPORATION_METHODS: [&str; 3] = ["best_of_n", "random_of_n", "without_feedback"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Feedback,
    Ranking,
    Incorporation,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Feedback => "feedback",
            Mode::Ranking => "ranking",
            Mode::Incorporation => "incorporation",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "feedback" => Ok(Mode::Feedback),
            "ranking" => Ok(Mode::Ranking),
            "incorporation" => Ok(Mode::Incorporation),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_id: String,
    pub annotator_id: String,
    pub mode: Mode,
    pub queue: Vec<String>,
    pub cursor: usize,
    pub seed: u64,
    pub methods: Vec<String>,
}

impl Session {
    pub fn current(&self) -> Option<&str> {
        self.queue.get(self.cursor).map(String::as_str)
    }

    pub fn advance(&mut self) {
        self.cursor = (self.cursor + 1).min(self.queue.len());
    }
}

fn seeded(seed: u64, item: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(item.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Blind label to method tag, shuffled per item. Recomputed on demand; it
/// never leaves the server.
pub fn blind_labels(seed: u64, item_id: &str, methods: &[String]) -> Vec<(&'static str, String)> {
    let mut shuffled = methods.to_vec();
    shuffled.shuffle(&mut seeded(seed, item_id));
    BLIND_LABELS.iter().copied().zip(shuffled).collect()
}

/// Eligible item ids for a new session, seeded-shuffled.
pub fn build_queue(
    corpus: &Corpus,
    index: &Index,
    annotator_id: &str,
    mode: Mode,
    methods: &[String],
    task_filter: Option<&BTreeSet<String>>,
    seed: u64,
) -> Vec<String> {
    let wanted = |task_id: &str| task_filter.map_or(true, |f| f.contains(task_id));
    let mut items: Vec<String> = match mode {
        Mode::Feedback => corpus
            .initial_outputs()
            .into_iter()
            .filter(|o| wanted(&o.task_id))
            .filter(|o| !index.feedback_pairs.contains(&(annotator_id.to_string(), o.output_id.clone())))
            .map(|o| o.output_id.clone())
            .collect(),
        Mode::Ranking => corpus
            .tasks
            .keys()
            .filter(|t| wanted(t))
            .filter(|t| methods.iter().all(|m| corpus.method_text(t, m).is_some()))
            .filter(|t| !index.ranked.contains(&(annotator_id.to_string(), t.to_string())))
            .cloned()
            .collect(),
        Mode::Incorporation => corpus
            .tasks
            .keys()
            .filter(|t| wanted(t))
            .filter(|t| {
                corpus
                    .initial_for(t)
                    .is_some_and(|o| index.feedback_for_output(&o.output_id).is_some())
            })
            .filter(|t| {
                let pending = methods
                    .iter()
                    .filter(|m| corpus.method_text(t, m).is_some())
                    .filter(|m| !index.judged.contains(&(t.to_string(), m.to_string())));
                pending.count() > 0
            })
            .cloned()
            .collect(),
    };
    items.shuffle(&mut seeded(seed, mode.as_str()));
    items
}
