//! Core data model and pure computations for refining model outputs with
//! natural-language feedback: record types and validation, prompt templates,
//! candidate selection, the word-removal benchmark, ranking statistics and
//! finetuning dataset preparation.

pub mod analytics;
pub mod domain;
pub mod error;
pub mod finetune;
pub mod prompts;
pub mod report;
pub mod selection;
pub mod stats;
pub mod store;
pub mod time;
pub mod validate;
pub mod word_removal;

pub use domain::{
    DecodingMode, DecodingParams, EmbeddingVector, FeedbackRecord, FinetuneExample,
    GeneratedOutput, Producer, QualityFlag, RefinementBatch, Strategy, TaskInput,
    DEFAULT_CANDIDATES,
};
pub use error::{Error, Result};
pub use time::Timestamp;
