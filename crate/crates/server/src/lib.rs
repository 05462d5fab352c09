//! HTTP/JSON and WebSocket front end for training sessions.
//!
//! Every session sits behind its own async mutex; all mutations run through
//! it, are persisted, and are broadcast to stream subscribers before the
//! lock is released.

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex as StdMutex, Weak};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dlc_core::error::Error as CoreError;
use dlc_core::scenario::{ClockMode, ScenarioConfig, SCHEMA_VERSION};
use dlc_core::session::{Command, Event, Session, SessionStore, Status};
use dlc_core::training::ModeId;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, Mutex};

const STREAM_BUFFER: usize = 4096;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    /// Where `scenario_name` and `scenario_path` are looked up.
    pub scenario_dir: Option<PathBuf>,
    /// Session logs; in-memory only when absent.
    pub data_dir: Option<PathBuf>,
}

impl ServerConfig {
    /// Reads a JSON config; relative directories are taken from the file's
    /// location.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for dir in [&mut cfg.scenario_dir, &mut cfg.data_dir]
            .into_iter()
            .flatten()
        {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }
}

struct Handle {
    session: Arc<Mutex<Session>>,
    tx: broadcast::Sender<Event>,
}

pub struct AppState {
    config: ServerConfig,
    store: Option<SessionStore>,
    sessions: StdMutex<HashMap<String, Arc<Handle>>>,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(config: ServerConfig) -> anyhow::Result<Shared> {
        let store = match &config.data_dir {
            Some(d) => Some(SessionStore::open(d)?),
            None => None,
        };
        Ok(Arc::new(Self {
            config,
            store,
            sessions: StdMutex::new(HashMap::new()),
        }))
    }

    fn cached(&self, id: &str) -> Option<Arc<Handle>> {
        self.sessions.lock().expect("session map").get(id).cloned()
    }

    async fn handle(self: &Arc<Self>, id: &str) -> Result<Arc<Handle>, ApiError> {
        if let Some(h) = self.cached(id) {
            return Ok(h);
        }
        let store = match &self.store {
            Some(s) if valid_id(id) && s.log_path(id).exists() => s.clone(),
            _ => return Err(ApiError::not_found(id)),
        };
        let owned = id.to_string();
        let session = tokio::task::spawn_blocking(move || store.load(&owned))
            .await
            .map_err(ApiError::join)??;
        let mut map = self.sessions.lock().expect("session map");
        if let Some(h) = map.get(id) {
            return Ok(h.clone());
        }
        let h = self.register(&mut map, session);
        Ok(h)
    }

    fn register(
        self: &Arc<Self>,
        map: &mut HashMap<String, Arc<Handle>>,
        session: Session,
    ) -> Arc<Handle> {
        let id = session.id().to_string();
        let clock = session.scenario().clock;
        let period_min = session.plant().period_min;
        let running = session.status() == Status::Running;
        let (tx, _) = broadcast::channel(STREAM_BUFFER);
        let h = Arc::new(Handle {
            session: Arc::new(Mutex::new(session)),
            tx,
        });
        map.insert(id, h.clone());
        if clock.mode == ClockMode::RealTime && running && clock.speed > 0.0 {
            let tick = Duration::from_secs_f64(period_min * 60.0 / clock.speed);
            tokio::spawn(run_clock(self.clone(), Arc::downgrade(&h), tick));
        }
        h
    }

    /// Runs `f` on the session with the lock held, then persists and
    /// broadcasts whatever it appended, even when `f` failed.
    async fn mutate<T, F>(self: &Arc<Self>, h: Arc<Handle>, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> dlc_core::error::Result<T> + Send + 'static,
    {
        let mut guard = h.session.clone().lock_owned().await;
        let app = self.clone();
        tokio::task::spawn_blocking(move || {
            let s = &mut *guard;
            let before = s.events().len();
            let out = f(s);
            let new = &s.events()[before..];
            if let Some(store) = &app.store {
                if let Err(e) = store.persist(s, new) {
                    tracing::error!(session = s.id(), "persist failed: {e}");
                    return Err(ApiError::from(e));
                }
            }
            for e in new {
                let _ = h.tx.send(e.clone());
            }
            out.map_err(ApiError::from)
        })
        .await
        .map_err(ApiError::join)?
    }

    fn scenario_path(&self, rel: &str) -> Result<PathBuf, ApiError> {
        let Some(dir) = &self.config.scenario_dir else {
            return Err(ApiError::bad_request("no scenario directory configured"));
        };
        let p = Path::new(rel);
        if p.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(ApiError::bad_request(
                "scenario path must stay inside the scenario directory",
            ));
        }
        Ok(dir.join(p))
    }
}

async fn run_clock(app: Shared, weak: Weak<Handle>, tick: Duration) {
    let mut interval = tokio::time::interval(tick);
    interval.tick().await;
    loop {
        interval.tick().await;
        let Some(h) = weak.upgrade() else { return };
        match app.mutate(h, |s| s.advance(1).map(|_| s.status())).await {
            Ok(Status::Running) => {}
            Ok(_) => return,
            Err(e) => {
                tracing::debug!("clock stopped: {}", e.message);
                return;
            }
        }
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    findings: Vec<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            findings: Vec::new(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no session {id}"),
        )
    }

    fn bad_request(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", msg)
    }

    fn join(e: tokio::task::JoinError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Validation(findings) => Self {
                findings,
                ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", msg)
            },
            CoreError::Rejected(_) => Self::new(StatusCode::CONFLICT, "rejected", msg),
            CoreError::ShutDown => Self::new(StatusCode::CONFLICT, "shutdown", msg),
            CoreError::IncompleteTrace(_) => Self::new(StatusCode::CONFLICT, "incomplete", msg),
            CoreError::OutOfRange { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "out_of_range", msg)
            }
            CoreError::Json(_) | CoreError::Config(_) => {
                Self::new(StatusCode::BAD_REQUEST, "bad_request", msg)
            }
            CoreError::Io(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "io", msg),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        let status = e.status();
        Self::new(
            status,
            if status == StatusCode::UNPROCESSABLE_ENTITY {
                "invalid_body"
            } else {
                "bad_request"
            },
            e.body_text(),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": self.code,
            "message": self.message,
        });
        if !self.findings.is_empty() {
            body["findings"] = json!(self.findings);
        }
        (self.status, Json(body)).into_response()
    }
}

/// Exactly one of `scenario`, `scenario_path` or `scenario_name`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub scenario_path: Option<String>,
    #[serde(default)]
    pub scenario_name: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mode: Option<ModeId>,
}

#[derive(Debug, Deserialize)]
pub struct AdvanceRequest {
    #[serde(default = "one")]
    pub steps: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
pub struct FromQuery {
    #[serde(default)]
    pub from: u64,
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}/state", get(state_summary))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/command", post(command))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/stream", get(stream))
        .route("/sessions/{id}/score", get(score))
        .with_state(state)
}

async fn load_scenario(app: &Shared, req: &CreateRequest) -> Result<ScenarioConfig, ApiError> {
    let given = [
        req.scenario.is_some(),
        req.scenario_path.is_some(),
        req.scenario_name.is_some(),
    ];
    if given.iter().filter(|g| **g).count() != 1 {
        return Err(ApiError::bad_request(
            "give exactly one of scenario, scenario_path, scenario_name",
        ));
    }
    if let Some(sc) = &req.scenario {
        let dir = app
            .config
            .scenario_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("."));
        let sc = sc.clone();
        return tokio::task::spawn_blocking(move || sc.resolve(&dir))
            .await
            .map_err(ApiError::join)?
            .map_err(Into::into);
    }
    let path = match (&req.scenario_path, &req.scenario_name) {
        (Some(p), _) => app.scenario_path(p)?,
        (_, Some(n)) if valid_id(n) => app.scenario_path(&format!("{n}.json"))?,
        _ => return Err(ApiError::bad_request("invalid scenario name")),
    };
    if !path.exists() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no scenario {}", path.display()),
        ));
    }
    tokio::task::spawn_blocking(move || ScenarioConfig::load(path))
        .await
        .map_err(ApiError::join)?
        .map_err(Into::into)
}

async fn create(
    State(app): State<Shared>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let Json(req) = body?;
    let mut sc = load_scenario(&app, &req).await?;
    if let Some(seed) = req.seed {
        sc.seed = seed;
    }
    if let Some(mode) = req.mode {
        sc.mode = mode;
    }
    let id = match req.id {
        Some(id) if valid_id(&id) => id,
        Some(_) => {
            return Err(ApiError::bad_request(
                "session ids use letters, digits, '-' and '_'",
            ))
        }
        None => uuid::Uuid::new_v4().simple().to_string(),
    };
    let exists =
        app.cached(&id).is_some() || app.store.as_ref().is_some_and(|s| s.log_path(&id).exists());
    if exists {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "exists",
            format!("session {id} already exists"),
        ));
    }
    let sid = id.clone();
    let session = tokio::task::spawn_blocking(move || Session::create(sid, sc))
        .await
        .map_err(ApiError::join)??;
    if let Some(store) = &app.store {
        store.persist(&session, session.events())?;
    }
    let summary = session.summary();
    {
        let mut map = app.sessions.lock().expect("session map");
        if map.contains_key(&id) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "exists",
                format!("session {id} already exists"),
            ));
        }
        app.register(&mut map, session);
    }
    tracing::info!(session = id, "created");
    Ok((
        StatusCode::CREATED,
        Json(json!({ "schema_version": SCHEMA_VERSION, "id": id, "state": summary })),
    ))
}

async fn list(State(app): State<Shared>) -> Result<Json<Value>, ApiError> {
    let mut ids: Vec<String> = app
        .sessions
        .lock()
        .expect("session map")
        .keys()
        .cloned()
        .collect();
    if let Some(store) = &app.store {
        ids.extend(store.list()?);
    }
    ids.sort();
    ids.dedup();
    Ok(Json(
        json!({ "schema_version": SCHEMA_VERSION, "sessions": ids }),
    ))
}

async fn state_summary(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Value>, ApiError> {
    let h = app.handle(&id).await?;
    let s = h.session.lock().await;
    Ok(Json(
        serde_json::to_value(s.summary()).map_err(CoreError::from)?,
    ))
}

async fn advance(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<AdvanceRequest>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let steps = match body {
        Ok(Json(b)) => b.steps,
        Err(JsonRejection::MissingJsonContentType(_)) => 1,
        Err(e) => return Err(e.into()),
    };
    let h = app.handle(&id).await?;
    let (events, summary) = app
        .mutate(h, move |s| Ok((s.advance(steps)?.len(), s.summary())))
        .await?;
    let mut v = serde_json::to_value(summary).map_err(CoreError::from)?;
    v["events_appended"] = json!(events);
    Ok(Json(v))
}

async fn command(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Command>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let Json(cmd) = body?;
    let h = app.handle(&id).await?;
    let out = app.mutate(h, move |s| s.submit(cmd)).await?;
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "events": out.events,
        "advice": out.advice,
    })))
}

async fn events(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<FromQuery>,
) -> Result<Json<Value>, ApiError> {
    let h = app.handle(&id).await?;
    let s = h.session.lock().await;
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "from": q.from,
        "next_seq": s.events().len(),
        "events": s.events_from(q.from),
    })))
}

async fn score(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Value>, ApiError> {
    let h = app.handle(&id).await?;
    let b = app.mutate(h, |s| s.score()).await?;
    Ok(Json(
        json!({ "schema_version": SCHEMA_VERSION, "id": id, "score": b }),
    ))
}

async fn stream(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<FromQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let h = app.handle(&id).await?;
    Ok(ws.on_upgrade(move |socket| pump(socket, h, q.from)))
}

/// Backlog from `from`, then live events. Subscribing under the session
/// lock keeps the two contiguous.
async fn pump(socket: WebSocket, h: Arc<Handle>, from: u64) {
    let (backlog, mut rx) = {
        let s = h.session.lock().await;
        (s.events_from(from).to_vec(), h.tx.subscribe())
    };
    let (mut tx, mut incoming) = socket.split();
    for e in backlog {
        if send_event(&mut tx, &e).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Ok(e) if e.seq >= from => {
                    if send_event(&mut tx, &e).await.is_err() {
                        return;
                    }
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let frame = CloseFrame { code: 1013, reason: format!("lagged by {n} events; reconnect with from").into() };
                    let _ = tx.send(Message::Close(Some(frame))).await;
                    return;
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
            msg = incoming.next() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn send_event<S>(tx: &mut S, e: &Event) -> Result<(), ()>
where
    S: futures::Sink<Message> + Unpin,
{
    let text = serde_json::to_string(e).map_err(|_| ())?;
    tx.send(Message::Text(text.into())).await.map_err(|_| ())
}
