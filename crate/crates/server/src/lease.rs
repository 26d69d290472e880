use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::error::ApiError;

/// The write lease a client holds on one project.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaseView {
    pub project: String,
    pub token: String,
    pub expires_at: DateTime<Utc>,
    pub ttl_seconds: f64,
}

#[derive(Debug, Clone)]
struct Lease {
    token: String,
    deadline: Instant,
    expires_at: DateTime<Utc>,
}

/// At most one live lease per project. A lease expires after `ttl` without
/// use; every successful mutating call renews it.
#[derive(Debug)]
pub struct Leases {
    ttl: Duration,
    held: Mutex<HashMap<String, Lease>>,
}

impl Leases {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            held: Mutex::new(HashMap::new()),
        }
    }

    fn fresh(&self, token: String) -> Lease {
        Lease {
            token,
            deadline: Instant::now() + self.ttl,
            expires_at: Utc::now() + self.ttl,
        }
    }

    fn view(&self, project: &str, lease: &Lease) -> LeaseView {
        LeaseView {
            project: project.to_string(),
            token: lease.token.clone(),
            expires_at: lease.expires_at,
            ttl_seconds: self.ttl.as_secs_f64(),
        }
    }

    /// Grants a new lease, or renews the caller's own. Fails while another
    /// client holds a live lease.
    pub fn acquire(&self, project: &str, presented: Option<&str>) -> Result<LeaseView, ApiError> {
        let mut held = self.held.lock().map_err(|_| ApiError::internal())?;
        let now = Instant::now();
        if let Some(current) = held.get(project) {
            let live = current.deadline > now;
            if live && presented != Some(current.token.as_str()) {
                return Err(ApiError::new(
                    StatusCode::LOCKED,
                    "lease_held",
                    format!("project {project:?} is leased by another session"),
                ));
            }
            if live {
                let renewed = self.fresh(current.token.clone());
                let view = self.view(project, &renewed);
                held.insert(project.to_string(), renewed);
                return Ok(view);
            }
        }
        let lease = self.fresh(uuid::Uuid::new_v4().to_string());
        let view = self.view(project, &lease);
        held.insert(project.to_string(), lease);
        Ok(view)
    }

    /// Checks that `presented` is the project's live lease and renews it.
    pub fn check(&self, project: &str, presented: Option<&str>) -> Result<(), ApiError> {
        let mut held = self.held.lock().map_err(|_| ApiError::internal())?;
        let Some(token) = presented else {
            return Err(ApiError::stale_lease("this call needs a lease (x-lease-token header)"));
        };
        match held.get(project) {
            Some(l) if l.token == token && l.deadline > Instant::now() => {
                let renewed = self.fresh(l.token.clone());
                held.insert(project.to_string(), renewed);
                Ok(())
            }
            _ => Err(ApiError::stale_lease(format!(
                "lease on project {project:?} is expired or held by another session"
            ))),
        }
    }

    pub fn release(&self, project: &str, presented: Option<&str>) -> Result<(), ApiError> {
        self.check(project, presented)?;
        let mut held = self.held.lock().map_err(|_| ApiError::internal())?;
        held.remove(project);
        Ok(())
    }
}
