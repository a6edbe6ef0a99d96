//! JSON-over-HTTP task service: project and video registration, slot
//! assignment with expiring tickets, gated submissions, round administration
//! and evaluation.

pub mod app;
mod error;
pub mod http;

use std::net::SocketAddr;
use std::sync::Arc;

pub use app::{AssignmentTicket, Clock, ManualClock, Service, SystemClock, TaskOffer};
pub use error::ApiError;
pub use http::router;

/// Environment variable holding the listen address.
pub const ADDR_ENV: &str = "CROWDMOT_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

pub fn listen_addr_from_env() -> Result<SocketAddr, std::net::AddrParseError> {
    std::env::var(ADDR_ENV).unwrap_or_else(|_| DEFAULT_ADDR.to_owned()).parse()
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, service: Arc<Service>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service)).await
}
