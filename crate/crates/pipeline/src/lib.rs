//! Orchestration over the gateway: refinement batches, the word-removal
//! benchmark, and the finetuning sweep.

pub mod bench;
mod error;
pub mod finetune;
pub mod refine;
pub mod sweep;

pub use error::{PipelineError, Result};
pub use refine::{refine_corpus, task_seed, CorpusRefinement, Refiner};
pub use sweep::{run_sweep, SweepConfig, SweepOutcome};
