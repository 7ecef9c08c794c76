//! HTTP service for the margin desk.
//!
//! Portfolios, risk reports, leverage queries and the what-if / commit trade
//! workflow, persisted in an append-only event log under `RISK_DATA_DIR`.

mod api;
pub mod money;
pub mod ops;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

pub use api::{router, Shared};
pub use store::Store;

/// Storage root from `RISK_DATA_DIR`, defaulting to `./risk-data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("RISK_DATA_DIR").map_or_else(|| PathBuf::from("risk-data"), PathBuf::from)
}

pub fn open(dir: impl Into<PathBuf>) -> Result<Shared, store::StoreError> {
    Ok(Arc::new(RwLock::new(Store::open(dir.into())?)))
}

/// Serves until interrupted.
pub async fn serve(port: u16, dir: PathBuf) -> std::io::Result<()> {
    let shared = open(&dir).map_err(std::io::Error::other)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {} (data in {})", listener.local_addr()?, dir.display());
    axum::serve(listener, router(shared))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
