use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use lambdapm_core::cloud::http;
use lambdapm_core::cloud::server::TcpServer;
use lambdapm_core::cloud::{CloudConfig, CloudService};
use tracing::info;

pub fn load_config(path: Option<&Path>) -> Result<CloudConfig> {
    Ok(match path {
        Some(p) => CloudConfig::load(p)?,
        None => CloudConfig::default(),
    })
}

/// Runs the protocol listener and the HTTP API until Ctrl-C.
///
/// Prints one `listening tcp=<addr> http=<addr>` line to stdout once both
/// sockets are bound, so callers using port 0 can find them.
pub fn serve(config: CloudConfig) -> Result<()> {
    let host = config.bind_host.clone();
    let (tcp_port, http_port) = (config.tcp_port, config.http_port);
    let service = Arc::new(CloudService::open(config)?);
    let mut tcp = TcpServer::start(service.clone(), (host.as_str(), tcp_port))
        .with_context(|| format!("binding protocol listener on {host}:{tcp_port}"))?;

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let result = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host.as_str(), http_port))
            .await
            .with_context(|| format!("binding HTTP API on {host}:{http_port}"))?;
        println!("listening tcp={} http={}", tcp.local_addr(), listener.local_addr()?);
        info!(tcp = %tcp.local_addr(), http = %listener.local_addr()?, "cloud up");
        let retry = {
            let service = service.clone();
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(std::time::Duration::from_secs(30));
                loop {
                    tick.tick().await;
                    let svc = service.clone();
                    let _ = tokio::task::spawn_blocking(move || svc.retry_erp_submissions()).await;
                }
            })
        };
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            info!("shutting down");
        };
        let r = http::serve(service.clone(), listener, shutdown).await;
        retry.abort();
        r.map_err(anyhow::Error::from)
    });
    tcp.shutdown();
    result
}
