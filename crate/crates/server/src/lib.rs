//! HTTP service for Smart Labeling projects.
//!
//! One catalog snapshot is shared by every project. Reads of different
//! projects run concurrently; writes to a project are serialized by its lock
//! and gated by a per-project lease presented in the `x-lease-token` header.
//! Mutating calls accept an `idempotency-key` header: a retry with the same
//! key returns the original response, and label events are deduplicated by
//! key in the event log itself, so retries stay safe across restarts.

mod error;
mod lease;
mod routes;

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::http::StatusCode;
use serde_json::Value;
use tokio::net::TcpListener;

use emlabel_core::datastore::{Catalog, Project, DEFAULT_SEED};
use emlabel_core::engine::{EngineContext, Session, DEFAULT_PAGE_SIZE, DEFAULT_POOL_SIZE};

pub use error::ApiError;
pub use lease::LeaseView;
pub use routes::router;

pub const LEASE_HEADER: &str = "x-lease-token";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Directory holding one subdirectory per project.
    pub state_dir: PathBuf,
    /// Idle time after which a lease lapses.
    pub lease_ttl: Duration,
    pub pool_size: usize,
    pub default_page_size: usize,
    pub max_page_size: usize,
    /// Seed for projects created without an explicit one.
    pub default_seed: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            state_dir: PathBuf::from("state"),
            lease_ttl: Duration::from_secs(15 * 60),
            pool_size: DEFAULT_POOL_SIZE,
            default_page_size: DEFAULT_PAGE_SIZE,
            max_page_size: 1000,
            default_seed: DEFAULT_SEED,
        }
    }
}

/// A stored response for an idempotency key.
type Reply = (StatusCode, Value);

/// An open project and the responses it has given to keyed requests.
struct Slot {
    session: Session,
    replies: HashMap<String, Reply>,
}

struct Inner {
    ctx: Arc<EngineContext>,
    config: ServerConfig,
    projects: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
    created: Mutex<HashMap<String, Reply>>,
    leases: lease::Leases,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(catalog: Arc<Catalog>, config: ServerConfig) -> emlabel_core::Result<Self> {
        std::fs::create_dir_all(&config.state_dir)?;
        let ctx = Arc::new(EngineContext::new(catalog)?);
        Ok(Self(Arc::new(Inner {
            ctx,
            leases: lease::Leases::new(config.lease_ttl),
            config,
            projects: Mutex::new(HashMap::new()),
            created: Mutex::new(HashMap::new()),
        })))
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        self.0.ctx.catalog()
    }

    pub fn config(&self) -> &ServerConfig {
        &self.0.config
    }

    fn session(&self, project: Project) -> Session {
        Session::new(project, Arc::clone(&self.0.ctx)).with_pool_size(self.0.config.pool_size)
    }

    /// The project's slot, opened from disk on first use.
    fn slot(&self, name: &str) -> Result<Arc<Mutex<Slot>>, ApiError> {
        let mut projects = self.0.projects.lock().map_err(|_| ApiError::internal())?;
        if let Some(s) = projects.get(name) {
            return Ok(Arc::clone(s));
        }
        let project = Project::open(&self.0.config.state_dir, name)?;
        let slot = Arc::new(Mutex::new(Slot {
            session: self.session(project),
            replies: HashMap::new(),
        }));
        projects.insert(name.to_string(), Arc::clone(&slot));
        Ok(slot)
    }

    /// Runs `f` on the locked project off the async executor.
    async fn with_project<T, F>(&self, name: String, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Slot) -> Result<T, ApiError> + Send + 'static,
    {
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let slot = state.slot(&name)?;
            let mut guard = slot.lock().map_err(|_| ApiError::internal())?;
            f(&mut guard)
        })
        .await
        .map_err(|_| ApiError::internal())?
    }
}

/// Binds the listening socket, reporting a busy port with the address.
pub async fn bind(addr: &str) -> Result<TcpListener, String> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| format!("cannot listen on {addr}: {e}"))
}

/// Serves until `shutdown` resolves. Label events are durably written before
/// each acknowledgment, so nothing is left to flush when it returns.
pub async fn serve<S>(listener: TcpListener, state: AppState, shutdown: S) -> std::io::Result<()>
where
    S: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
