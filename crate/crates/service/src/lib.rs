//! Exam-session HTTP service.
//!
//! A session collects questionnaire answers, one or more photos cropped to
//! the capture guide, and pain/bleeding strokes per photo. `analyze` runs the
//! detector on each photo and writes a report with per-condition levels,
//! boxes or heatmaps, and education text. Every session lives in its own
//! directory and is rebuilt from an append-only event log, so sessions
//! survive restarts.

pub mod analysis;
pub mod api;
pub mod catalog;
pub mod error;
pub mod session;
pub mod store;

pub use analysis::{assess_image, ConditionReport, ExamReport, HeatmapRef, ImageReport, Models};
pub use api::{router, AppState, MaskResponse, ServiceConfig};
pub use catalog::{CatalogEntry, SuggestionCatalog};
pub use error::{ServiceError, ServiceResult};
pub use session::{ExamSession, SessionEvent, SessionStatus};
pub use store::SessionStore;

/// Bind and serve until the process is stopped.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}
