use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Args;
use mcle_core::data::load_dataset;
use mcle_service::{build_store, serve, shutdown_signal, ServiceConfig};

use crate::error::{CliError, Result};

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, env = "MCLE_DATA_DIR")]
    data: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Where sessions are checkpointed on idle and on shutdown.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    max_sessions: usize,
    /// Seconds before an idle session is checkpointed and unloaded.
    #[arg(long, default_value_t = 1800)]
    idle_timeout: u64,
    /// Static console assets, served under /console/.
    #[arg(long)]
    console_dir: Option<PathBuf>,
}

pub fn cmd_serve(args: ServeArgs) -> Result<()> {
    let data = Arc::new(load_dataset(&args.data)?);
    let config = ServiceConfig {
        checkpoint_dir: args.checkpoint_dir,
        max_sessions: args.max_sessions,
        idle_timeout: Duration::from_secs(args.idle_timeout),
        console_dir: args.console_dir,
    };
    let store = build_store(data, &config)?;
    crate::runtime()?.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::io(&addr, e))?;
        log::info!("listening on http://{}", listener.local_addr().map_err(|e| CliError::io(&addr, e))?);
        serve(listener, store, &config, shutdown_signal())
            .await
            .map_err(|e| CliError::io(&addr, e))
    })
}
