//! Route table and handlers.
//!
//! ```text
//! GET    /health                       catalog size and dimension
//! GET    /projects                     project names
//! POST   /projects                     create a project
//! GET    /projects/{p}                 project summary
//! POST   /projects/{p}/lease           acquire or renew the write lease
//! DELETE /projects/{p}/lease           release it
//! POST   /projects/{p}/features        add/remove keyword features    (lease)
//! GET    /projects/{p}/candidates      ?mode=search|active|correction|review
//!                                      &term=&lo=&hi=&page=&page_size=&k=
//! POST   /projects/{p}/labels          append labels, retrain          (lease)
//! POST   /projects/{p}/retrain         refit on current labels         (lease)
//! GET    /projects/{p}/stats           counts, pool positive rate, model
//! GET    /projects/{p}/export          id<TAB>probability<TAB>label
//! GET    /objects/{id}                 one catalog object
//! ```

use std::collections::HashMap;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use emlabel_core::datastore::{export_rows, write_export};
use emlabel_core::datastore::{validate_project_name, Project};
use emlabel_core::engine::{CandidatePage, LabelInput, Mode, Session, TrainReport};
use emlabel_core::linmodel::DEFAULT_FOLDS;
use emlabel_core::textmatch::KeywordFeatureSet;

use crate::error::ApiError;
use crate::{AppState, Slot, IDEMPOTENCY_HEADER, LEASE_HEADER};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/{p}", get(get_project))
        .route("/projects/{p}/lease", post(acquire_lease).delete(release_lease))
        .route("/projects/{p}/features", post(post_features))
        .route("/projects/{p}/candidates", get(get_candidates))
        .route("/projects/{p}/labels", post(post_labels))
        .route("/projects/{p}/retrain", post(post_retrain))
        .route("/projects/{p}/stats", get(get_stats))
        .route("/projects/{p}/export", get(get_export))
        .route("/objects/{id}", get(get_object))
        .with_state(state)
}

type ApiResult = Result<Response, ApiError>;

fn header_str<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name).and_then(|v| v.to_str().ok())
}

/// Parses a JSON body; an empty body reads as `{}`.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let raw: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(raw).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn reply((status, body): (StatusCode, Value)) -> Response {
    (status, Json(body)).into_response()
}

/// Runs a mutating handler once per idempotency key; a retry gets the
/// stored response.
fn once(
    slot: &mut Slot,
    route: &str,
    key: Option<&str>,
    f: impl FnOnce(&mut Session) -> Result<(StatusCode, Value), ApiError>,
) -> Result<(StatusCode, Value), ApiError> {
    let stored = key.map(|k| format!("{route}:{k}"));
    if let Some(r) = stored.as_ref().and_then(|k| slot.replies.get(k)) {
        return Ok(r.clone());
    }
    let out = f(&mut slot.session)?;
    if let Some(k) = stored {
        slot.replies.insert(k, out.clone());
    }
    Ok(out)
}

fn summary(session: &Session) -> Value {
    let p = &session.project;
    json!({
        "name": p.name,
        "seed": p.seed,
        "lambda": p.lambda,
        "keyword_features": p.features.match_strings(),
        "feature_version": p.features.version(),
        "notes": p.notes,
        "has_model": p.model.is_some(),
        "model_version": p.model_version,
        "model_stale": p.model_stale,
        "labeled_counts": session.labeled_counts(),
        "events": p.log.events().len(),
    })
}

fn report_json(report: &TrainReport) -> Value {
    serde_json::to_value(report).unwrap_or(Value::Null)
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    let c = state.catalog();
    Json(json!({ "status": "ok", "catalog_count": c.len(), "embedding_dim": c.dim() }))
}

async fn list_projects(State(state): State<AppState>) -> ApiResult {
    let root = state.config().state_dir.clone();
    let names = tokio::task::spawn_blocking(move || Project::list(&root))
        .await
        .map_err(|_| ApiError::internal())??;
    Ok(Json(json!({ "projects": names })).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateProject {
    name: String,
    seed: Option<u64>,
    lambda: Option<f64>,
    #[serde(default)]
    keyword_features: Vec<String>,
    #[serde(default)]
    notes: String,
}

async fn create_project(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let req: CreateProject = parse_body(&body)?;
    validate_project_name(&req.name)?;
    let key = header_str(&headers, IDEMPOTENCY_HEADER).map(str::to_string);
    let out = tokio::task::spawn_blocking(move || -> Result<(StatusCode, Value), ApiError> {
        let inner = &state.0;
        let mut created = inner.created.lock().map_err(|_| ApiError::internal())?;
        if let Some(r) = key.as_ref().and_then(|k| created.get(k)) {
            return Ok(r.clone());
        }
        // Creation holds the registry lock so two racing creates cannot both succeed.
        let mut projects = inner.projects.lock().map_err(|_| ApiError::internal())?;
        let mut project = Project::create(&inner.config.state_dir, &req.name, req.seed.unwrap_or(inner.config.default_seed))?;
        if let Some(l) = req.lambda {
            project.set_lambda(l)?;
        }
        project.features = KeywordFeatureSet::new(&req.keyword_features)?;
        project.notes = req.notes;
        project.save()?;
        let session = state.session(project);
        let out = (StatusCode::CREATED, summary(&session));
        projects.insert(
            req.name,
            std::sync::Arc::new(std::sync::Mutex::new(Slot {
                session,
                replies: HashMap::new(),
            })),
        );
        if let Some(k) = key {
            created.insert(k, out.clone());
        }
        Ok(out)
    })
    .await
    .map_err(|_| ApiError::internal())??;
    Ok(reply(out))
}

async fn get_project(State(state): State<AppState>, Path(p): Path<String>) -> ApiResult {
    let v = state.with_project(p, |slot| Ok(summary(&slot.session))).await?;
    Ok(Json(v).into_response())
}

async fn acquire_lease(State(state): State<AppState>, Path(p): Path<String>, headers: HeaderMap) -> ApiResult {
    // Unknown projects are a 404, not a lease.
    state.with_project(p.clone(), |_| Ok(())).await?;
    let view = state.0.leases.acquire(&p, header_str(&headers, LEASE_HEADER))?;
    Ok(Json(view).into_response())
}

async fn release_lease(State(state): State<AppState>, Path(p): Path<String>, headers: HeaderMap) -> ApiResult {
    state.with_project(p.clone(), |_| Ok(())).await?;
    state.0.leases.release(&p, header_str(&headers, LEASE_HEADER))?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeaturesBody {
    #[serde(default)]
    add: Vec<String>,
    #[serde(default)]
    remove: Vec<String>,
}

async fn post_features(
    State(state): State<AppState>,
    Path(p): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let req: FeaturesBody = parse_body(&body)?;
    state.with_project(p.clone(), |_| Ok(())).await?;
    state.0.leases.check(&p, header_str(&headers, LEASE_HEADER))?;
    let key = header_str(&headers, IDEMPOTENCY_HEADER).map(str::to_string);
    let out = state
        .with_project(p, move |slot| {
            once(slot, "features", key.as_deref(), |session| {
                // All-or-nothing: a bad entry leaves the set untouched.
                let mut features = session.project.features.clone();
                for s in &req.remove {
                    features.remove(s)?;
                }
                for s in &req.add {
                    features.push(s)?;
                }
                session.set_features(features);
                session.project.save()?;
                let p = &session.project;
                let retrain_pending = p.model.as_ref().is_some_and(|m| m.check_features(&p.features).is_err());
                Ok((
                    StatusCode::OK,
                    json!({
                        "keyword_features": p.features.match_strings(),
                        "feature_version": p.features.version(),
                        "retrain_pending": retrain_pending,
                        "model_version": p.model_version,
                        "model_stale": p.model_stale,
                    }),
                ))
            })
        })
        .await?;
    Ok(reply(out))
}

fn query_num<T: std::str::FromStr>(q: &HashMap<String, String>, name: &str) -> Result<Option<T>, ApiError> {
    q.get(name)
        .map(|v| {
            v.parse()
                .map_err(|_| ApiError::bad_request(format!("query parameter {name}={v:?} is not a valid number")))
        })
        .transpose()
}

fn page_json(state: &AppState, session: &Session, page: CandidatePage) -> Value {
    let catalog = state.catalog();
    let items: Vec<Value> = page
        .items
        .iter()
        .map(|item| {
            let rec = catalog.by_id(&item.object_id);
            let label = item.label.map(|b| if b { "POSITIVE" } else { "NEGATIVE" });
            let mut v = json!({
                "object_id": item.object_id,
                "probability": item.probability,
                "label": label,
                "title": rec.map(|r| r.title.as_str()),
                "image_refs": rec.and_then(|r| r.image_refs.clone()).unwrap_or_default(),
                "source_url": rec.and_then(|r| r.source_url.clone()),
            });
            if let Some(s) = item.mislabel_score {
                v["mislabel_score"] = json!(s);
            }
            v
        })
        .collect();
    json!({
        "mode": page.mode,
        "items": items,
        "page_token": page.page_token,
        "pool_stats": page.pool_stats,
        "total": page.total,
        "model_version": session.project.model_version,
        "model_stale": session.project.model_stale,
    })
}

async fn get_candidates(
    State(state): State<AppState>,
    Path(p): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let mode: Mode = match q.get("mode").map(String::as_str) {
        Some("search") => Mode::Search,
        Some("active") => Mode::Active,
        Some("correction") => Mode::Correction,
        Some("review") => Mode::Review,
        Some(other) => {
            return Err(ApiError::bad_request(format!(
                "unknown mode {other:?} (expected search, active, correction or review)"
            )))
        }
        None => return Err(ApiError::bad_request("query parameter mode is required")),
    };
    let cfg = state.config();
    let page_size = query_num::<usize>(&q, "page_size")?.unwrap_or(cfg.default_page_size);
    if page_size == 0 || page_size > cfg.max_page_size {
        return Err(ApiError::bad_request(format!(
            "page_size must be between 1 and {}, got {page_size}",
            cfg.max_page_size
        )));
    }
    let page = query_num::<usize>(&q, "page")?.unwrap_or(0);
    let k = query_num::<usize>(&q, "k")?.unwrap_or(DEFAULT_FOLDS);
    let lo = query_num::<f64>(&q, "lo")?;
    let hi = query_num::<f64>(&q, "hi")?;
    let term = q.get("term").cloned();
    let pool_size = cfg.pool_size;
    let st = state.clone();
    let v = state
        .with_project(p, move |slot| {
            let s = &mut slot.session;
            let page = match mode {
                Mode::Search => {
                    let term = term.ok_or_else(|| ApiError::bad_request("search mode needs term"))?;
                    s.search_page(&term, page, page_size)?
                }
                Mode::Active => s.next_uncertain_page(pool_size, page_size)?,
                Mode::Correction => {
                    let (Some(lo), Some(hi)) = (lo, hi) else {
                        return Err(ApiError::bad_request("correction mode needs lo and hi"));
                    };
                    s.range_page(lo, hi, page_size)?
                }
                Mode::Review => s.review_page(page_size, k)?,
            };
            Ok(page_json(&st, s, page))
        })
        .await?;
    Ok(Json(v).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsBody {
    #[serde(default)]
    labels: Vec<LabelInput>,
    /// Objects shown but passed over; kept out of later active and
    /// correction pages this session.
    #[serde(default)]
    skipped: Vec<String>,
}

async fn post_labels(
    State(state): State<AppState>,
    Path(p): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let req: LabelsBody = parse_body(&body)?;
    state.with_project(p.clone(), |_| Ok(())).await?;
    state.0.leases.check(&p, header_str(&headers, LEASE_HEADER))?;
    let key = header_str(&headers, IDEMPOTENCY_HEADER).map(str::to_string);
    let catalog = std::sync::Arc::clone(state.catalog());
    let out = state
        .with_project(p, move |slot| {
            once(slot, "labels", key.as_deref(), |session| {
                if let Some(id) = req.skipped.iter().find(|id| !catalog.contains(id)) {
                    return Err(emlabel_core::Error::NotFound(format!("object {id:?}")).into());
                }
                // Per-event keys let the log itself drop replayed events.
                let labels: Vec<LabelInput> = req
                    .labels
                    .into_iter()
                    .enumerate()
                    .map(|(i, mut l)| {
                        if l.key.is_none() {
                            l.key = key.as_ref().map(|k| format!("{k}/{i}"));
                        }
                        l
                    })
                    .collect();
                let report = session.advance_and_retrain(&labels, Utc::now())?;
                session.mark_skipped(req.skipped);
                Ok((StatusCode::OK, report_json(&report)))
            })
        })
        .await?;
    Ok(reply(out))
}

async fn post_retrain(State(state): State<AppState>, Path(p): Path<String>, headers: HeaderMap) -> ApiResult {
    state.with_project(p.clone(), |_| Ok(())).await?;
    state.0.leases.check(&p, header_str(&headers, LEASE_HEADER))?;
    let key = header_str(&headers, IDEMPOTENCY_HEADER).map(str::to_string);
    let out = state
        .with_project(p, move |slot| {
            once(slot, "retrain", key.as_deref(), |session| {
                Ok((StatusCode::OK, report_json(&session.retrain()?)))
            })
        })
        .await?;
    Ok(reply(out))
}

async fn get_stats(State(state): State<AppState>, Path(p): Path<String>) -> ApiResult {
    let v = state
        .with_project(p, |slot| {
            let s = &mut slot.session;
            let counts = s.labeled_counts();
            let has_current_model = s
                .project
                .model
                .as_ref()
                .is_some_and(|m| m.check_features(&s.project.features).is_ok());
            let rate = if has_current_model { s.pool_positive_rate().ok() } else { None };
            Ok(json!({
                "labeled_counts": counts,
                "unlabeled_pool_size": s.catalog().len() - counts.total,
                "pool_positive_rate": rate,
                "model_version": s.project.model_version,
                "model_stale": s.project.model_stale,
                "feature_version": s.project.features.version(),
                "events": s.project.log.events().len(),
                "skipped": s.skipped().len(),
            }))
        })
        .await?;
    Ok(Json(v).into_response())
}

async fn get_export(State(state): State<AppState>, Path(p): Path<String>) -> ApiResult {
    let catalog = std::sync::Arc::clone(state.catalog());
    let bytes = state
        .with_project(p, move |slot| {
            let rows = export_rows(&slot.session.project, &catalog)?;
            let mut out = Vec::new();
            write_export(&rows, &mut out)?;
            Ok(out)
        })
        .await?;
    Ok(([(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")], bytes).into_response())
}

async fn get_object(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let rec = state
        .catalog()
        .by_id(&id)
        .ok_or_else(|| ApiError::from(emlabel_core::Error::NotFound(format!("object {id:?}"))))?;
    let mut v = serde_json::to_value(rec).map_err(|_| ApiError::internal())?;
    // Embeddings are large and meaningless to a person; report the size only.
    if let Some(obj) = v.as_object_mut() {
        obj.remove("embedding");
        obj.insert("embedding_dim".into(), json!(rec.embedding.len()));
    }
    Ok(Json(v).into_response())
}
