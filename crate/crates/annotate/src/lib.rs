//! Blind two-fold voting service for labelling mined candidate comments.
//!
//! Every candidate goes to two annotators who never see each other's
//! votes. Identical votes are accepted; differing ones go to an adjudicator.
//! All changes are appended to an event log that replays to the same state.

pub mod error;
pub mod http;
pub mod state;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use parking_lot::Mutex;

pub use error::{AnnotateError, Result};
pub use http::{router, Shared};
pub use state::{Event, State, Task, TaskState};
pub use store::{load_state, read_events, replay, Clock, ServiceConfig, Store};

pub fn system_clock() -> Clock {
    Arc::new(chrono::Utc::now)
}

pub fn shared(store: Store) -> Shared {
    Arc::new(Mutex::new(store))
}

/// Serves the API until ctrl-c.
pub async fn serve(addr: SocketAddr, store: Shared) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| AnnotateError::io(addr.to_string(), e))?;
    tracing::info!(%addr, "annotation service listening");
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| AnnotateError::io(addr.to_string(), e))
}
