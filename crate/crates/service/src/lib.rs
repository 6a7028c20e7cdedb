//! Local HTTP facade over the job orchestrator, for the companion review UI.
//!
//! The service binds to loopback unless explicitly told otherwise, answers in
//! JSON (plus PNG previews and a server-sent event stream per job), and
//! scrubs every registry or in-flight patient id from every body it sends.

mod api;
mod error;
mod fs;
mod scrub;
pub mod views;

use std::future::Future;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;
use vidpriv_core::{AppConfig, DetectorConfig, MediaTool, Mode, Orchestrator, OutputProfile};

pub use api::router;
pub use error::{ApiError, ErrorCode};

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    pub port: u16,
    pub allow_non_loopback: bool,
    /// Directories `/fs/list` may browse.
    pub fs_roots: Vec<PathBuf>,
    /// Static UI assets; `None` serves only the API.
    pub ui_dir: Option<PathBuf>,
    pub default_mode: Mode,
    pub profile: OutputProfile,
    pub detector: DetectorConfig,
    pub classifier: vidpriv_core::detect::ClassifierSpec,
}

impl ServiceConfig {
    /// Service settings of `app`, with the workspace `input/` directory as the
    /// browse root when none is configured.
    pub fn from_app(app: &AppConfig, input_dir: PathBuf) -> Self {
        Self {
            bind: app.bind,
            port: app.port,
            allow_non_loopback: app.allow_non_loopback,
            fs_roots: if app.fs_roots.is_empty() { vec![input_dir] } else { app.fs_roots.clone() },
            ui_dir: app.ui_dir.clone(),
            default_mode: app.default_mode,
            profile: app.profile.clone(),
            detector: app.detector.clone(),
            classifier: app.classifier.clone(),
        }
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("refusing to bind non-loopback address {0} without allow_non_loopback")]
    NonLoopback(IpAddr),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("service runtime: {0}")]
    Runtime(std::io::Error),
}

/// Everything request handlers share.
#[derive(Clone)]
pub struct AppState {
    pub orchestrator: Arc<Orchestrator>,
    pub tool: MediaTool,
    pub config: Arc<ServiceConfig>,
    /// Flips to true when the server starts shutting down; ends event streams.
    pub(crate) stopping: tokio::sync::watch::Receiver<bool>,
    stop_tx: Arc<tokio::sync::watch::Sender<bool>>,
}

impl AppState {
    pub fn new(orchestrator: Arc<Orchestrator>, tool: MediaTool, config: ServiceConfig) -> Self {
        let (tx, rx) = tokio::sync::watch::channel(false);
        Self { orchestrator, tool, config: Arc::new(config), stopping: rx, stop_tx: Arc::new(tx) }
    }
}

/// Bind the configured address, enforcing the loopback policy.
pub fn bind(cfg: &ServiceConfig) -> Result<std::net::TcpListener, ServiceError> {
    if !cfg.bind.is_loopback() {
        if !cfg.allow_non_loopback {
            return Err(ServiceError::NonLoopback(cfg.bind));
        }
        log::warn!("binding non-loopback address {}; the service has no authentication", cfg.bind);
    }
    let addr = cfg.addr();
    let listener = std::net::TcpListener::bind(addr).map_err(|source| ServiceError::Bind { addr, source })?;
    listener.set_nonblocking(true).map_err(|source| ServiceError::Bind { addr, source })?;
    Ok(listener)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: std::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::from_std(listener).map_err(ServiceError::Runtime)?;
    let stop_tx = Arc::clone(&state.stop_tx);
    let app = router(state, listener.local_addr().map_err(ServiceError::Runtime)?);
    let shutdown = async move {
        shutdown.await;
        let _ = stop_tx.send(true);
    };
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await.map_err(ServiceError::Runtime)
}

/// A service running on its own runtime thread.
pub struct BackgroundService {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), ServiceError>>>,
}

impl BackgroundService {
    pub fn spawn(listener: std::net::TcpListener, state: AppState) -> Result<Self, ServiceError> {
        let addr = listener.local_addr().map_err(ServiceError::Runtime)?;
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(ServiceError::Runtime)?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("vidpriv-service".into())
            .spawn(move || {
                let result = runtime.block_on(serve(listener, state, async {
                    let _ = rx.await;
                }));
                runtime.shutdown_timeout(std::time::Duration::from_secs(2));
                result
            })
            .map_err(ServiceError::Runtime)?;
        Ok(Self { addr, stop: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn stop(mut self) -> Result<(), ServiceError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or(Ok(())),
            None => Ok(()),
        }
    }
}

impl Drop for BackgroundService {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}
