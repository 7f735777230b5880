//! Uniform access to text completion, embeddings and finetune jobs, with a
//! deterministic mock backend and an OpenAI-compatible HTTP client.

mod backend;
pub mod config;
mod error;
mod gateway;
pub mod http;
pub mod mock;
mod types;

pub use backend::Backend;
pub use config::GatewayConfig;
pub use error::{GatewayError, Result};
pub use gateway::{Gateway, RetryPolicy, DEFAULT_CONCURRENCY, DEFAULT_MAX_ATTEMPTS};
pub use mock::{MockBackend, MockConfig};
pub use types::{truncate_at_stop, CompletionRequest, FinetuneJobSpec, JobHandle, JobStatus};
