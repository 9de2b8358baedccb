//! HTTP service for a running performance: participants view and edit the
//! editable regions of modules, and clients follow the session through a
//! long-polled state snapshot.

use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Redirect, Response};
use axum::routing::get;
use axum::{Json, Router};
use liveseq_core::engine::{EngineError, EngineHandle, Observer, SessionView};
use liveseq_core::scheduler::{Action, Mode, Session, DEFAULT_STEP_PAUSE_MS};
use liveseq_core::store::{Diagnostic, ProgramStore, StoreError};
use liveseq_core::syntax::render_term_unlimited;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::watch;

/// Long polls never wait longer than this, whatever the client asks for.
pub const MAX_POLL: Duration = Duration::from_secs(60);
const DEFAULT_POLL: Duration = Duration::from_secs(20);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transport {
    pub phase: String,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_pause_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub module: String,
    pub start: usize,
    pub end: usize,
}

/// Published session state. `seq` grows with every change.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub generation: u64,
    pub transport: Transport,
    pub current_term: String,
    pub highlights: Vec<Highlight>,
    pub last_item: Option<String>,
    pub error: Option<String>,
    pub items: u64,
    pub events: u64,
}

impl Snapshot {
    fn new(seq: u64, v: &SessionView) -> Self {
        Snapshot {
            seq,
            generation: v.generation,
            transport: transport_of(v),
            current_term: v.current_term.clone(),
            highlights: v
                .highlights
                .iter()
                .map(|s| Highlight {
                    module: s.module.to_string(),
                    start: s.start,
                    end: s.end,
                })
                .collect(),
            last_item: v.last_item.map(|i| render_term_unlimited(&i.to_term())),
            error: v.error.clone(),
            items: v.items,
            events: v.events,
        }
    }
}

fn transport_of(v: &SessionView) -> Transport {
    Transport {
        phase: v.phase.to_string(),
        mode: v.mode.name().to_string(),
        step_pause_ms: match v.mode {
            Mode::SlowMotion { step_pause_ms } => Some(step_pause_ms),
            _ => None,
        },
    }
}

/// Creates the engine observer that feeds the snapshot channel, seeded
/// with the state of `session` before it starts running.
pub fn snapshot_channel(session: &Session) -> (Observer, watch::Receiver<Snapshot>) {
    let mut last = SessionView::of(session);
    let (tx, rx) = watch::channel(Snapshot::new(1, &last));
    let mut seq = 1;
    let observer: Observer = Box::new(move |view: &SessionView| {
        if *view != last {
            seq += 1;
            last = view.clone();
            tx.send_replace(Snapshot::new(seq, view));
        }
    });
    (observer, rx)
}

struct Shared {
    store: Mutex<ProgramStore>,
    engine: RwLock<Option<EngineHandle>>,
    snapshots: watch::Receiver<Snapshot>,
    ui_dir: Option<PathBuf>,
}

/// The service state. Cheap to clone; all clones share one store and engine.
#[derive(Clone)]
pub struct App {
    shared: Arc<Shared>,
}

impl App {
    pub fn new(
        store: ProgramStore,
        engine: EngineHandle,
        snapshots: watch::Receiver<Snapshot>,
        ui_dir: Option<PathBuf>,
    ) -> Self {
        App {
            shared: Arc::new(Shared {
                store: Mutex::new(store),
                engine: RwLock::new(Some(engine)),
                snapshots,
                ui_dir,
            }),
        }
    }

    pub fn router(&self) -> Router {
        let mut router = Router::new()
            .route("/", get(index))
            .route("/modules", get(list_modules))
            .route("/module/{name}", get(get_module).post(post_module))
            .route("/state", get(get_state))
            .route("/transport", axum::routing::post(post_transport));
        if let Some(dir) = &self.shared.ui_dir {
            router = router
                .route("/ui", get(|| async { Redirect::permanent("/ui/") }))
                .nest_service("/ui/", tower_http::services::ServeDir::new(dir));
        }
        router.with_state(self.clone())
    }

    pub fn snapshot(&self) -> Snapshot {
        self.shared.snapshots.borrow().clone()
    }

    /// Runs `f` with exclusive access to the store.
    pub fn with_store<T>(&self, f: impl FnOnce(&mut ProgramStore) -> T) -> T {
        f(&mut self.shared.store.lock().unwrap_or_else(|e| e.into_inner()))
    }

    /// Runs `f` against the engine, unless it has been shut down.
    pub fn with_engine<T>(&self, f: impl FnOnce(&EngineHandle) -> Result<T, EngineError>) -> Result<T, EngineError> {
        let guard = self.shared.engine.read().unwrap_or_else(|e| e.into_inner());
        f(guard.as_ref().ok_or(EngineError::Gone)?)
    }

    /// Stops the engine and returns its session. Later requests that need
    /// the engine get 503.
    pub fn shutdown(&self) -> Option<Session> {
        let engine = self.shared.engine.write().unwrap_or_else(|e| e.into_inner()).take();
        engine.and_then(EngineHandle::shutdown)
    }
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(listener: TcpListener, app: &App, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, app.router()).with_graceful_shutdown(shutdown).await
}

#[derive(Serialize)]
struct ModuleEntry {
    name: String,
    has_marker: bool,
}

async fn list_modules(State(app): State<App>) -> Json<Vec<ModuleEntry>> {
    let modules = app.with_store(|s| s.modules());
    Json(
        modules
            .into_iter()
            .map(|(name, has_marker)| ModuleEntry { name, has_marker })
            .collect(),
    )
}

#[derive(Serialize)]
struct ModulePayload {
    header: String,
    editable: String,
    has_marker: bool,
    generation: u64,
}

#[derive(Deserialize, Default)]
struct FormatQuery {
    format: Option<String>,
}

fn wants_json(headers: &HeaderMap, format: Option<&str>) -> bool {
    if let Some(f) = format {
        return f == "json";
    }
    let accepts = |h| {
        headers
            .get(h)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.contains("application/json"))
    };
    accepts(header::ACCEPT) || accepts(header::CONTENT_TYPE)
}

fn json_error(status: StatusCode, message: impl ToString) -> Response {
    (status, Json(serde_json::json!({ "error": message.to_string() }))).into_response()
}

async fn get_module(
    State(app): State<App>,
    Path(name): Path<String>,
    Query(q): Query<FormatQuery>,
    headers: HeaderMap,
) -> Response {
    let json = wants_json(&headers, q.format.as_deref());
    let found = app.with_store(|s| s.view(&name).map(|v| (v, s.generation())));
    match found {
        Ok((view, generation)) if json => Json(ModulePayload {
            header: view.header,
            editable: view.editable,
            has_marker: view.has_marker,
            generation,
        })
        .into_response(),
        Ok((view, generation)) => {
            let body = if view.has_marker {
                module_form(&name, &view.header, &view.editable, generation, None)
            } else {
                format!("<pre>{}</pre>\n<p>This module is read-only.</p>", escape(&view.header))
            };
            Html(page(&name, &body)).into_response()
        }
        Err(e) if json => json_error(StatusCode::NOT_FOUND, e),
        Err(e) => (StatusCode::NOT_FOUND, Html(page("Not found", &escape(&e.to_string())))).into_response(),
    }
}

#[derive(Deserialize)]
struct Submission {
    editable_text: String,
    #[serde(default, deserialize_with = "optional_number")]
    expected_generation: Option<u64>,
}

/// Accepts numbers, numeric strings and empty strings (from HTML forms).
fn optional_number<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(u64),
        Text(String),
    }
    match Option::<Raw>::deserialize(d)? {
        None => Ok(None),
        Some(Raw::Num(n)) => Ok(Some(n)),
        Some(Raw::Text(s)) if s.trim().is_empty() => Ok(None),
        Some(Raw::Text(s)) => s.trim().parse().map(Some).map_err(serde::de::Error::custom),
    }
}

#[derive(Serialize)]
struct ErrorEntry {
    module: Option<String>,
    start: Option<usize>,
    end: Option<usize>,
    line: Option<usize>,
    column: Option<usize>,
    message: String,
}

impl From<&Diagnostic> for ErrorEntry {
    fn from(d: &Diagnostic) -> Self {
        ErrorEntry {
            module: d.module.clone(),
            start: d.start,
            end: d.end,
            line: d.line,
            column: d.column,
            message: d.message.clone(),
        }
    }
}

enum SubmitError {
    Store(StoreError),
    Engine(EngineError),
}

async fn post_module(
    State(app): State<App>,
    Path(name): Path<String>,
    Query(q): Query<FormatQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let json = wants_json(&headers, q.format.as_deref());
    let is_json_body = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("json"));
    let parsed: Result<Submission, String> = if is_json_body {
        serde_json::from_slice(&body).map_err(|e| e.to_string())
    } else {
        serde_urlencoded::from_bytes(&body).map_err(|e| e.to_string())
    };
    let sub = match parsed {
        Ok(s) => s,
        Err(e) => return json_error(StatusCode::BAD_REQUEST, format!("malformed submission: {e}")),
    };

    let worker = app.clone();
    let module = name.clone();
    let text = sub.editable_text.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        worker.with_store(|store| {
            let edit = store
                .check_edit(&module, &text, sub.expected_generation)
                .map_err(SubmitError::Store)?;
            worker
                .with_engine(|e| e.swap(edit.program.clone()))
                .map_err(SubmitError::Engine)?;
            let generation = store.commit(edit);
            tracing::info!(module = %module, generation, "edit accepted");
            Ok(generation)
        })
    })
    .await
    .unwrap_or(Err(SubmitError::Engine(EngineError::Gone)));

    let (status, errors, message) = match &outcome {
        Ok(_) => (StatusCode::OK, Vec::new(), String::new()),
        Err(SubmitError::Store(StoreError::Rejected(d))) => {
            (StatusCode::UNPROCESSABLE_ENTITY, d.iter().map(ErrorEntry::from).collect(), String::new())
        }
        Err(SubmitError::Store(e @ StoreError::NoSuchModule(_))) => (StatusCode::NOT_FOUND, Vec::new(), e.to_string()),
        Err(SubmitError::Store(e @ StoreError::StaleGeneration { .. })) => {
            (StatusCode::CONFLICT, Vec::new(), e.to_string())
        }
        Err(SubmitError::Store(e @ StoreError::NoEditableRegion(_))) => {
            (StatusCode::FORBIDDEN, Vec::new(), e.to_string())
        }
        Err(SubmitError::Store(e)) => (StatusCode::INTERNAL_SERVER_ERROR, Vec::new(), e.to_string()),
        Err(SubmitError::Engine(e)) => (StatusCode::SERVICE_UNAVAILABLE, Vec::new(), e.to_string()),
    };
    let generation = app.with_store(|s| s.generation());

    if json {
        let body = match outcome {
            Ok(g) => serde_json::json!({ "generation": g }),
            Err(SubmitError::Store(StoreError::Rejected(_))) => {
                serde_json::json!({ "errors": errors, "generation": generation })
            }
            Err(_) => serde_json::json!({ "error": message, "generation": generation }),
        };
        return (status, Json(body)).into_response();
    }

    let header = app.with_store(|s| s.view(&name).map(|v| v.header)).unwrap_or_default();
    let notice = match outcome {
        Ok(g) => format!("<p class=\"ok\">Accepted as generation {g}.</p>"),
        Err(_) if errors.is_empty() => format!("<p class=\"error\">{}</p>", escape(&message)),
        Err(_) => {
            let items: String = errors
                .iter()
                .map(|e| {
                    let at = match (e.line, e.column) {
                        (Some(l), Some(c)) => format!("line {l}, column {c}: "),
                        _ => String::new(),
                    };
                    format!("<li>{}{}</li>", at, escape(&e.message))
                })
                .collect();
            format!("<p class=\"error\">The submission was not accepted:</p><ul>{items}</ul>")
        }
    };
    let body = module_form(&name, &header, &sub.editable_text, generation, Some(&notice));
    (status, Html(page(&name, &body))).into_response()
}

#[derive(Deserialize)]
struct StateQuery {
    since: Option<u64>,
    timeout_ms: Option<u64>,
}

async fn get_state(State(app): State<App>, Query(q): Query<StateQuery>) -> Json<Snapshot> {
    let mut rx = app.shared.snapshots.clone();
    let Some(since) = q.since else {
        return Json(rx.borrow().clone());
    };
    let wait = q.timeout_ms.map(Duration::from_millis).unwrap_or(DEFAULT_POLL).min(MAX_POLL);
    let changed = tokio::time::timeout(wait, async { rx.wait_for(|s| s.seq > since).await.map(|s| s.clone()) }).await;
    match changed {
        Ok(Ok(s)) => Json(s),
        _ => Json(app.snapshot()),
    }
}

#[derive(Deserialize)]
struct TransportRequest {
    action: Option<String>,
    mode: Option<String>,
    step_pause_ms: Option<u64>,
}

async fn post_transport(State(app): State<App>, Json(req): Json<TransportRequest>) -> Response {
    let action = match req.action.as_deref() {
        None => None,
        Some(a) => match Action::parse(a) {
            Some(a) => Some(a),
            None => return json_error(StatusCode::BAD_REQUEST, format!("unknown action {a:?}")),
        },
    };
    let current = app.snapshot().transport.step_pause_ms;
    let mode = match req.mode.as_deref() {
        None => None,
        Some("realtime") => Some(Mode::RealTime),
        Some("slow") => Some(Mode::SlowMotion {
            step_pause_ms: req.step_pause_ms.or(current).unwrap_or(DEFAULT_STEP_PAUSE_MS),
        }),
        Some("step") => Some(Mode::SingleStep),
        Some(m) => return json_error(StatusCode::BAD_REQUEST, format!("unknown mode {m:?}")),
    };
    if action.is_none() && mode.is_none() {
        return json_error(StatusCode::BAD_REQUEST, "expected an action or a mode");
    }
    let worker = app.clone();
    let result = tokio::task::spawn_blocking(move || worker.with_engine(|e| e.transport(action, mode)))
        .await
        .unwrap_or(Err(EngineError::Gone));
    match result {
        Ok(view) => Json(transport_of(&view)).into_response(),
        Err(EngineError::Transport(e)) => (
            StatusCode::CONFLICT,
            Json(serde_json::json!({ "error": e.to_string(), "phase": e.phase.to_string() })),
        )
            .into_response(),
        Err(e) => json_error(StatusCode::SERVICE_UNAVAILABLE, e),
    }
}

async fn index(State(app): State<App>) -> Html<String> {
    let modules = app.with_store(|s| s.modules());
    let snap = app.snapshot();
    let items: String = modules
        .iter()
        .map(|(name, marked)| {
            let note = if *marked { "" } else { " (read-only)" };
            format!("<li><a href=\"/module/{0}\">{0}</a>{1}</li>", escape(name), note)
        })
        .collect();
    let ui = if app.shared.ui_dir.is_some() {
        "<p><a href=\"/ui/\">Performer interface</a></p>"
    } else {
        ""
    };
    Html(page(
        "Modules",
        &format!(
            "<p>Generation {}, {} ({}).</p><ul>{items}</ul>{ui}",
            snap.generation, snap.transport.phase, snap.transport.mode
        ),
    ))
}

fn module_form(name: &str, header: &str, editable: &str, generation: u64, notice: Option<&str>) -> String {
    format!(
        "{notice}<pre>{header}</pre>\n<form method=\"post\" action=\"/module/{name}\">\
<textarea name=\"editable_text\" rows=\"24\" cols=\"80\">{editable}</textarea>\
<input type=\"hidden\" name=\"expected_generation\" value=\"{generation}\">\
<p><button type=\"submit\">Submit</button></p></form>",
        notice = notice.unwrap_or(""),
        header = escape(header),
        name = escape(name),
        editable = escape(editable),
    )
}

fn page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{t}</title></head>\n\
<body><h1>{t}</h1>\n{body}\n</body></html>\n",
        t = escape(title)
    )
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a < b && \"c\""), "a &lt; b &amp;&amp; &quot;c&quot;");
    }

    #[test]
    fn form_numbers_may_be_blank() {
        let s: Submission = serde_urlencoded::from_str("editable_text=x+%3D+1&expected_generation=").unwrap();
        assert_eq!((s.editable_text.as_str(), s.expected_generation), ("x = 1", None));
        let s: Submission = serde_urlencoded::from_str("editable_text=&expected_generation=3").unwrap();
        assert_eq!(s.expected_generation, Some(3));
        let s: Submission = serde_json::from_str(r#"{"editable_text":"","expected_generation":4}"#).unwrap();
        assert_eq!(s.expected_generation, Some(4));
    }
}
