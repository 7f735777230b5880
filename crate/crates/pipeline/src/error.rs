use std::path::PathBuf;

use thiserror::Error;

use feedloop_gateway::GatewayError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] feedloop_core::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("task `{task_id}`: {succeeded} of {requested} candidates usable; {}", reasons.join("; "))]
    IncompleteBatch {
        task_id: String,
        requested: usize,
        succeeded: usize,
        reasons: Vec<String>,
    },
    #[error("task `{task_id}`: strategy {strategy} needs feedback")]
    MissingFeedback { task_id: String, strategy: String },
    #[error("candidate {index}: {source}")]
    Scoring {
        index: usize,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },
    #[error("no grid point completed all folds")]
    NoValidGridPoint,
    #[error("{0}")]
    Invalid(String),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
