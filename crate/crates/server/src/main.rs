use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use dlc_server::{router, AppState, ServerConfig};
use tracing_subscriber::EnvFilter;

/// Serves training sessions over HTTP and WebSocket. The listen address
/// comes from DLC_BIND (default 127.0.0.1:8080).
#[derive(Parser)]
#[command(version)]
struct Args {
    /// JSON file with `scenario_dir` and `data_dir`.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .init();
    let args = Args::parse();
    let config = match &args.config {
        Some(p) => ServerConfig::load(p)?,
        None => ServerConfig {
            scenario_dir: Some(PathBuf::from("scenarios")),
            data_dir: None,
        },
    };
    let bind = std::env::var("DLC_BIND").unwrap_or_else(|_| "127.0.0.1:8080".into());
    let app = router(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .with_context(|| format!("binding {bind}"))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
