//! HTTP job service: submit FASTA, poll the job, fetch the TSV result.
//!
//! Requests are handled concurrently; jobs run on a bounded pool of
//! blocking workers fed by an in-process queue. The bundle is loaded once
//! and shared read-only.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Result;
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ecannot_core::agents::Mode;
use ecannot_core::annotate::annotate_fasta;
use ecannot_core::bundle::Bundle;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{mpsc, Mutex};

use crate::store::{valid_job_id, JobStore};

/// Upper bound on a submitted FASTA body.
pub const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub workers: usize,
    /// Finished jobs older than this are deleted; `None` keeps them forever.
    pub ttl: Option<Duration>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            ttl: None,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    bundle: Arc<Bundle>,
    store: Arc<JobStore>,
    queue: mpsc::UnboundedSender<String>,
}

/// Runs one job to a terminal state.
pub fn run_job(bundle: &Bundle, store: &JobStore, id: &str) -> Result<()> {
    let job = store.start(id)?;
    let outcome = store
        .input(id)
        .and_then(|bytes| String::from_utf8(bytes).map_err(|_| anyhow::anyhow!("input is not UTF-8 text")))
        .and_then(|text| annotate_fasta(bundle, &text, job.mode, None).map_err(Into::into));
    match outcome {
        Ok(a) => store.finish(id, a.tsv.as_bytes(), a.rows, a.failed)?,
        Err(e) => store.fail(id, &e.to_string())?,
    };
    Ok(())
}

/// Starts the worker pool (re-queuing jobs left unfinished by a previous
/// process) and returns the router. Must be called inside a Tokio runtime.
pub fn start(bundle: Arc<Bundle>, store: JobStore, config: ServiceConfig) -> Router {
    let store = Arc::new(store);
    let (tx, rx) = mpsc::unbounded_channel::<String>();
    let rx = Arc::new(Mutex::new(rx));
    for _ in 0..config.workers.max(1) {
        let rx = Arc::clone(&rx);
        let bundle = Arc::clone(&bundle);
        let store = Arc::clone(&store);
        tokio::spawn(async move {
            loop {
                let next = rx.lock().await.recv().await;
                let Some(id) = next else { break };
                let (b, s) = (Arc::clone(&bundle), Arc::clone(&store));
                let job = id.clone();
                match tokio::task::spawn_blocking(move || run_job(&b, &s, &job)).await {
                    Ok(Ok(())) => {}
                    Ok(Err(e)) => log::error!("job {id}: {e:#}"),
                    Err(e) => {
                        log::error!("job {id}: worker panicked: {e}");
                        let _ = store.fail(&id, "internal error");
                    }
                }
            }
        });
    }
    for id in store.unfinished() {
        log::info!("re-queuing job {id}");
        let _ = tx.send(id);
    }
    if let Some(ttl) = config.ttl {
        let store = Arc::clone(&store);
        tokio::spawn(async move {
            let period = ttl.min(Duration::from_secs(60)).max(Duration::from_secs(1));
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                let cutoff = chrono::Utc::now() - chrono::Duration::from_std(ttl).unwrap_or(chrono::Duration::MAX);
                match store.purge_finished_before(cutoff) {
                    Ok(0) => {}
                    Ok(n) => log::info!("purged {n} expired jobs"),
                    Err(e) => log::warn!("purge failed: {e:#}"),
                }
            }
        });
    }
    router(AppState {
        bundle,
        store,
        queue: tx,
    })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/jobs", post(submit))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/result", get(job_result))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

/// Binds and serves until Ctrl-C.
pub async fn serve(bind: SocketAddr, bundle: Arc<Bundle>, store: JobStore, config: ServiceConfig) -> Result<()> {
    let app = start(bundle, store, config);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn healthz(State(state): State<AppState>) -> Response {
    Json(json!({
        "status": "ok",
        "jobs": state.store.len(),
        "embedding": state.bundle.manifest.embedding,
        "labels": state.bundle.manifest.labels,
    }))
    .into_response()
}

#[derive(Debug, Deserialize)]
struct SubmitQuery {
    mode: Option<String>,
}

async fn submit(State(state): State<AppState>, Query(q): Query<SubmitQuery>, req: Request) -> Response {
    let mode = match q.mode.as_deref().map(str::parse::<Mode>).transpose() {
        Ok(m) => m.unwrap_or(Mode::Prediction),
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let body = if is_multipart {
        match multipart_body(Multipart::from_request(req, &state).await).await {
            Ok(b) => b,
            Err(r) => return r,
        }
    } else {
        match Bytes::from_request(req, &state).await {
            Ok(b) => b,
            Err(e) => return e.into_response(),
        }
    };
    let store = Arc::clone(&state.store);
    let created = tokio::task::spawn_blocking(move || store.create(&body, mode)).await;
    match created {
        Ok(Ok(job)) => {
            if state.queue.send(job.job_id.clone()).is_err() {
                return error(StatusCode::SERVICE_UNAVAILABLE, "worker pool stopped");
            }
            (StatusCode::ACCEPTED, Json(job)).into_response()
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}")),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// The first file field, or the first field of any kind.
async fn multipart_body(
    mp: std::result::Result<Multipart, axum::extract::multipart::MultipartRejection>,
) -> std::result::Result<Bytes, Response> {
    let mut mp = mp.map_err(IntoResponse::into_response)?;
    let mut fallback = None;
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| error(StatusCode::BAD_REQUEST, e.to_string()))?
    {
        let is_file = field.file_name().is_some();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| error(StatusCode::BAD_REQUEST, e.to_string()))?;
        if is_file {
            return Ok(bytes);
        }
        fallback.get_or_insert(bytes);
    }
    fallback.ok_or_else(|| error(StatusCode::BAD_REQUEST, "multipart body has no fields"))
}

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match valid_job_id(&id).then(|| state.store.get(&id)).flatten() {
        Some(job) => Json(job).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown job {id}")),
    }
}

async fn job_result(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    if !valid_job_id(&id) {
        return error(StatusCode::NOT_FOUND, format!("unknown job {id}"));
    }
    let store = Arc::clone(&state.store);
    let lookup = id.clone();
    let res = tokio::task::spawn_blocking(move || store.result(&lookup).map(|r| (store.get(&lookup), r))).await;
    match res {
        Ok(Ok((_, Some(bytes)))) => (
            [(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")],
            bytes,
        )
            .into_response(),
        Ok(Ok((Some(job), None))) => error(StatusCode::NOT_FOUND, format!("job {id} is {}", job.state)),
        Ok(Ok((None, None))) => error(StatusCode::NOT_FOUND, format!("unknown job {id}")),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}")),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}
