//! HTTP/SSE server. Mutating requests take the session lock one at a time,
//! are journaled as a `Command` entry and persist the checkpoint; reads see
//! a consistent snapshot under the same lock.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{broadcast, Mutex};

use txforge_core::runtime::JournalEntry;

use crate::error::GatewayError;
use crate::session::{FaultRequest, Session};
use crate::views;

pub struct AppState {
    session: Mutex<Session>,
    events: broadcast::Sender<JournalEntry>,
}

pub type Shared = Arc<AppState>;

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult = Result<Json<Value>, GatewayError>;

fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, GatewayError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| GatewayError::new("BadRequest", e.to_string()))
}

pub fn router(session: Session) -> Router {
    let (events, _) = broadcast::channel(1024);
    let state = Arc::new(AppState {
        session: Mutex::new(session),
        events,
    });
    Router::new()
        .route("/api/session", get(get_session))
        .route("/api/model", get(get_model))
        .route("/api/regions", get(get_regions))
        .route("/api/state", get(get_state))
        .route("/api/journal", get(get_journal))
        .route("/api/report", get(get_report))
        .route("/api/repair/ticket", get(get_ticket))
        .route("/api/events", get(get_events))
        .route("/api/select", post(post_select))
        .route("/api/run", post(post_run))
        .route("/api/step", post(post_step))
        .route("/api/fault", post(post_fault))
        .route("/api/repair/patch", post(post_patch))
        .route("/api/resume", post(post_resume))
        .fallback(|| async {
            (
                StatusCode::NOT_FOUND,
                Json(GatewayError::new("NotFound", "no such endpoint")),
            )
        })
        .with_state(state)
}

pub async fn serve(session: Session, port: u16) -> Result<(), GatewayError> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
        .await
        .map_err(|e| GatewayError::new("IoError", e.to_string()))?;
    let addr = listener
        .local_addr()
        .map_err(|e| GatewayError::new("IoError", e.to_string()))?;
    println!("listening on http://{addr}");
    axum::serve(listener, router(session))
        .await
        .map_err(|e| GatewayError::new("IoError", e.to_string()))
}

/// Journal the command, run it, publish what it appended and persist.
async fn mutate(
    state: &AppState,
    name: &str,
    detail: Value,
    op: impl FnOnce(&mut Session) -> Result<Value, GatewayError>,
) -> ApiResult {
    let mut s = state.session.lock().await;
    let before = s.engine.journal().len();
    s.engine.note_command(name, detail);
    let result = op(&mut s);
    let saved = s.save();
    for e in &s.engine.journal().entries()[before.min(s.engine.journal().len())..] {
        // Nobody listening is fine.
        let _ = state.events.send(e.clone());
    }
    let value = result?;
    saved?;
    Ok(Json(value))
}

async fn get_session(State(st): State<Shared>) -> ApiResult {
    let s = st.session.lock().await;
    let path = s.path.as_ref().map(|p| p.display().to_string());
    Ok(Json(views::session(&s.engine, path.as_deref())))
}

async fn get_model(State(st): State<Shared>) -> ApiResult {
    Ok(Json(views::model(&st.session.lock().await.engine)))
}

async fn get_regions(State(st): State<Shared>) -> ApiResult {
    let s = st.session.lock().await;
    let rows = views::regions(s.engine.bound())?;
    Ok(Json(serde_json::to_value(rows).expect("rows serialize")))
}

async fn get_state(State(st): State<Shared>) -> ApiResult {
    Ok(Json(views::state(&st.session.lock().await.engine)))
}

#[derive(Debug, Deserialize)]
struct FromQuery {
    from: Option<u64>,
}

async fn get_journal(State(st): State<Shared>, Query(q): Query<FromQuery>) -> ApiResult {
    let s = st.session.lock().await;
    let entries = s.engine.journal().since(q.from.unwrap_or(1));
    Ok(Json(serde_json::to_value(entries).expect("entries serialize")))
}

async fn get_report(State(st): State<Shared>) -> ApiResult {
    Ok(Json(views::report(&st.session.lock().await.engine)))
}

async fn get_ticket(State(st): State<Shared>) -> ApiResult {
    let s = st.session.lock().await;
    let (xml, sidecar) = s.ticket()?;
    let sidecar: Value = serde_json::from_str(&sidecar).expect("sidecar is JSON");
    Ok(Json(json!({
        "ticket": s.engine.ticket(),
        "fragment": xml,
        "sidecar": sidecar,
    })))
}

fn sse_event(e: &JournalEntry) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.event.kind())
        .data(serde_json::to_string(e).expect("entry serializes"))
}

/// Journal entries as they are appended. With `?from=<seq>` the stream
/// starts with the stored entries from that sequence number on.
async fn get_events(
    State(st): State<Shared>,
    Query(q): Query<FromQuery>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let (backlog, rx) = {
        let s = st.session.lock().await;
        let backlog: Vec<JournalEntry> = match q.from {
            Some(from) => s.engine.journal().since(from).to_vec(),
            None => Vec::new(),
        };
        (backlog, st.events.subscribe())
    };
    let last = backlog.last().map(|e| e.seq).unwrap_or(0);
    let live = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(e) => return Some((e, rx)),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
    .filter(move |e| futures::future::ready(e.seq > last));
    let events = stream::iter(backlog).chain(live).map(|e| Ok(sse_event(&e)));
    Sse::new(events).keep_alive(KeepAlive::default())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectBody {
    /// Transaction name → region id.
    #[serde(default)]
    tx: BTreeMap<String, String>,
}

async fn post_select(State(st): State<Shared>, body: Bytes) -> ApiResult {
    let req: SelectBody = parse_body(&body)?;
    let detail = json!({ "tx": req.tx });
    let picks: Vec<(String, String)> = req.tx.into_iter().collect();
    let mut s = st.session.lock().await;
    let before = s.engine.journal().len();
    // Selecting replaces the engine, so the command is noted afterwards.
    let selected = s.select(&picks);
    s.engine.note_command("select", detail);
    let saved = s.save();
    // Carried-over commands keep their sequence numbers, so only the new
    // entry is published.
    for e in &s.engine.journal().entries()[before..] {
        let _ = st.events.send(e.clone());
    }
    let value = selected?;
    saved?;
    Ok(Json(value))
}

async fn post_run(State(st): State<Shared>, body: Bytes) -> ApiResult {
    let _: Option<Value> = parse_body(&body)?;
    mutate(&st, "run", Value::Null, Session::run).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepBody {
    #[serde(default = "one")]
    n: usize,
}

impl Default for StepBody {
    fn default() -> StepBody {
        StepBody { n: one() }
    }
}

fn one() -> usize {
    1
}

async fn post_step(State(st): State<Shared>, body: Bytes) -> ApiResult {
    let req: StepBody = parse_body(&body)?;
    mutate(&st, "step", json!({ "n": req.n }), |s| s.step(req.n)).await
}

async fn post_fault(State(st): State<Shared>, body: Bytes) -> ApiResult {
    let req: Option<FaultRequest> = parse_body(&body)?;
    let req = req.ok_or_else(|| GatewayError::new("BadRequest", "a fault body is required"))?;
    let detail = serde_json::to_value(&req).expect("request serializes");
    mutate(&st, "fault", detail, |s| s.fault(&req)).await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchBody {
    fragment: String,
    /// The sidecar, as an object or as JSON text.
    sidecar: Value,
}

async fn post_patch(State(st): State<Shared>, body: Bytes) -> ApiResult {
    let req: Option<PatchBody> = parse_body(&body)?;
    let req = req.ok_or_else(|| GatewayError::new("BadRequest", "fragment and sidecar are required"))?;
    let sidecar = match &req.sidecar {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let ticket = serde_json::from_str::<Value>(&sidecar)
        .ok()
        .and_then(|v| v.get("ticketId").cloned())
        .unwrap_or(Value::Null);
    mutate(&st, "repair", json!({ "ticketId": ticket }), |s| {
        Ok(serde_json::to_value(s.repair(&req.fragment, &sidecar)?).expect("verdict serializes"))
    })
    .await
}

async fn post_resume(State(st): State<Shared>, body: Bytes) -> ApiResult {
    let _: Option<Value> = parse_body(&body)?;
    mutate(&st, "resume", Value::Null, Session::resume).await
}
