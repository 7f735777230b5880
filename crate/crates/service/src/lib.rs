//! Annotation service: hands out feedback, ranking and incorporation work
//! and appends submissions to line-delimited record files.

mod api;
mod error;
pub mod session;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;

pub use api::{
    router, AnnotationView, AppState, BlindSummary, Candidate, JudgmentReceipt, NextResponse, RankingReceipt,
    SessionView,
};
pub use error::{ApiError, ErrorBody};
pub use session::Mode;
pub use store::Store;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub addr: SocketAddr,
}

pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let store = Store::open(&config.data_dir).map_err(std::io::Error::other)?;
    let app = router(AppState::new(store), config.static_dir);
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, app).await
}
