#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use genonet_core::config::ServiceConfig;
use genonet_core::orchestrator::Orchestrator;
use genonet_gateway::{router, AppState};

pub const LOGICAL_CLOCK_START: u64 = 0;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub fn session_turns() -> Vec<String> {
    let text = std::fs::read_to_string(fixtures().join("session.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["turns"].as_array().unwrap().iter().map(|t| t.as_str().unwrap().to_string()).collect()
}

/// Replay configuration over the shared fixture tree, with the same logical
/// clock start the CLI uses under `GENONET_LOGICAL_CLOCK=1`.
pub fn config(sandbox: &std::path::Path, data_dir: Option<PathBuf>) -> ServiceConfig {
    let mut c = ServiceConfig::fixtures(&fixtures(), "session");
    c.sandbox_dir = sandbox.to_path_buf();
    c.data_dir = data_dir;
    c.logical_clock = Some(LOGICAL_CLOCK_START);
    c
}

pub fn orchestrator(sandbox: &std::path::Path, data_dir: Option<PathBuf>) -> Arc<Orchestrator> {
    Arc::new(config(sandbox, data_dir).build().expect("build orchestrator"))
}

/// Serves `state` on an ephemeral port and returns its base URL.
pub async fn spawn(state: AppState) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router(state)).await.unwrap();
    });
    format!("http://{addr}")
}
