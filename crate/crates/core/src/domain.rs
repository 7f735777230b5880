//! Shared record types. Field names are the on-disk names.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::time::Timestamp;

/// Default number of candidate refinements per batch.
pub const DEFAULT_CANDIDATES: usize = 20;

/// A unit of work, e.g. a forum post to summarize.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInput {
    pub task_id: String,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub source_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Producer {
    Model,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodingMode {
    Greedy,
    Nucleus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub mode: DecodingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl DecodingParams {
    pub fn greedy(max_tokens: u32) -> Self {
        DecodingParams {
            mode: DecodingMode::Greedy,
            top_p: None,
            max_tokens,
            stop_sequences: Vec::new(),
        }
    }

    pub fn nucleus(top_p: f64, max_tokens: u32) -> Self {
        DecodingParams {
            mode: DecodingMode::Nucleus,
            top_p: Some(top_p),
            max_tokens,
            stop_sequences: Vec::new(),
        }
    }

    /// Nucleus sampling with p = 0.9, up to 48 tokens.
    pub fn summarization() -> Self {
        Self::nucleus(0.9, 48)
    }

    /// Greedy decoding until 200 tokens or a newline.
    pub fn word_removal() -> Self {
        Self::greedy(200).with_stop("\n")
    }

    pub fn with_stop(mut self, stop: impl Into<String>) -> Self {
        self.stop_sequences.push(stop.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityFlag {
    /// Post-processing found no sentence terminator and kept the stripped text.
    Unterminated,
}

/// A model- or human-produced text for a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedOutput {
    pub output_id: String,
    pub task_id: String,
    pub text: String,
    pub producer: Producer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_tag: Option<String>,
    /// Which method produced the output (e.g. `initial_summary`); used to
    /// assemble ranking sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoding: Option<DecodingParams>,
    pub created_at: Timestamp,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quality_flags: Vec<QualityFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub feedback_id: String,
    pub task_id: String,
    pub output_id: String,
    pub text: String,
    pub annotator_id: String,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    BestOfN,
    RandomOfN,
    WithoutFeedback,
    First,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::BestOfN,
        Strategy::RandomOfN,
        Strategy::WithoutFeedback,
        Strategy::First,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::BestOfN => "best_of_n",
            Strategy::RandomOfN => "random_of_n",
            Strategy::WithoutFeedback => "without_feedback",
            Strategy::First => "first",
        }
    }

    pub fn uses_feedback(self) -> bool {
        !matches!(self, Strategy::WithoutFeedback)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

/// N candidate refinements of one initial output with their scores and the
/// chosen index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementBatch {
    pub batch_id: String,
    pub task_id: String,
    pub initial_output_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_id: Option<String>,
    pub candidates: Vec<GeneratedOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub selected_index: usize,
    pub strategy: Strategy,
}

impl RefinementBatch {
    pub fn selected(&self) -> Option<&GeneratedOutput> {
        self.candidates.get(self.selected_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub dim: usize,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        let dim = values.len();
        EmbeddingVector { values, dim }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector::new(self.values.iter().map(|v| v * factor).collect())
    }
}

/// One prompt/completion pair in a finetuning dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FinetuneExample {
    pub prompt: String,
    pub completion: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_parses_cli_spellings() {
        assert_eq!("best-of-n".parse::<Strategy>().unwrap(), Strategy::BestOfN);
        assert_eq!(
            "without_feedback".parse::<Strategy>().unwrap(),
            Strategy::WithoutFeedback
        );
        assert!("best".parse::<Strategy>().is_err());
    }

    #[test]
    fn decoding_defaults() {
        let s = DecodingParams::summarization();
        assert_eq!(s.mode, DecodingMode::Nucleus);
        assert_eq!(s.top_p, Some(0.9));
        assert_eq!(s.max_tokens, 48);

        let w = DecodingParams::word_removal();
        assert_eq!(w.mode, DecodingMode::Greedy);
        assert_eq!(w.top_p, None);
        assert_eq!(w.max_tokens, 200);
        assert_eq!(w.stop_sequences, vec!["\n".to_string()]);
    }

    #[test]
    fn optional_fields_are_omitted() {
        let out = GeneratedOutput {
            output_id: "o1".into(),
            task_id: "t1".into(),
            text: "Hi.".into(),
            producer: Producer::Human,
            model_tag: None,
            method_tag: None,
            decoding: None,
            created_at: Timestamp::from_unix(0),
            quality_flags: vec![],
        };
        let json = serde_json::to_string(&out).unwrap();
        assert_eq!(
            json,
            r#"{"output_id":"o1","task_id":"t1","text":"Hi.","producer":"human","created_at":"1970-01-01T00:00:00Z"}"#
        );
    }
}
