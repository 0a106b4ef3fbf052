//! HTTP service exposing live test sessions.
//!
//! Routes:
//! - `POST /sessions` creates a session from a [`SessionConfig`] body.
//! - `GET /sessions/{id}` returns the latest [`Snapshot`].
//! - `POST /sessions/{id}/observations` feeds one [`Observation`].
//! - `DELETE /sessions/{id}` stops a session by hand; its state stays readable.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::error::{invalid, Error, Result};
use crate::model::BlockDesign;
use crate::observation::Observation;
use crate::process::{decide_log, EvidenceProcess, ModelSpec, Pending};

fn default_alpha() -> f64 {
    0.05
}

fn default_one() -> usize {
    1
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default = "default_one")]
    pub n_a: usize,
    #[serde(default = "default_one")]
    pub n_b: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub model: ModelSpec,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n_a: 1,
            n_b: 1,
            alpha: default_alpha(),
            model: ModelSpec::default(),
        }
    }
}

impl SessionConfig {
    fn build(&self) -> Result<EvidenceProcess> {
        decide_log(0.0, self.alpha)?;
        EvidenceProcess::new(BlockDesign::new(self.n_a, self.n_b)?, self.model.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Running,
    StoppedRejected,
    StoppedManual,
}

/// What every endpoint returns for a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    pub status: SessionStatus,
    pub e_value: f64,
    pub log_e: f64,
    pub blocks_completed: u64,
    pub pending: Pending,
    pub alpha: f64,
    pub threshold: f64,
    pub reject: bool,
    pub trajectory: Vec<(u64, f64)>,
    pub n_a: usize,
    pub n_b: usize,
    pub model: ModelSpec,
    /// Set once the running E-value has reached the threshold.
    pub stop_signal: bool,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

struct Session {
    id: String,
    config: SessionConfig,
    process: EvidenceProcess,
    status: SessionStatus,
    created_at: u64,
    snapshot: Arc<Snapshot>,
}

impl Session {
    fn new(id: String, config: SessionConfig, created_at: u64) -> Result<Self> {
        let process = config.build()?;
        let mut s = Self {
            id,
            config,
            process,
            status: SessionStatus::Running,
            created_at,
            snapshot: Arc::new(placeholder_snapshot()),
        };
        s.refresh();
        Ok(s)
    }

    fn observe(&mut self, obs: &Observation) -> Result<()> {
        self.process.observe(obs.group, obs.outcome())?;
        if self.process.decide(self.config.alpha)?.reject {
            self.status = SessionStatus::StoppedRejected;
        }
        self.refresh();
        Ok(())
    }

    fn stop(&mut self) {
        if self.status == SessionStatus::Running {
            self.status = SessionStatus::StoppedManual;
            self.refresh();
        }
    }

    fn refresh(&mut self) {
        let d = decide_log(self.process.log_e(), self.config.alpha).expect("alpha validated at creation");
        self.snapshot = Arc::new(Snapshot {
            id: self.id.clone(),
            status: self.status,
            e_value: d.e_value,
            log_e: self.process.log_e(),
            blocks_completed: self.process.blocks_completed(),
            pending: self.process.pending(),
            alpha: self.config.alpha,
            threshold: d.threshold,
            reject: d.reject,
            trajectory: self.process.trajectory().to_vec(),
            n_a: self.config.n_a,
            n_b: self.config.n_b,
            model: self.config.model.clone(),
            stop_signal: d.reject,
            created_at: self.created_at,
        });
    }
}

fn placeholder_snapshot() -> Snapshot {
    Snapshot {
        id: String::new(),
        status: SessionStatus::Running,
        e_value: 1.0,
        log_e: 0.0,
        blocks_completed: 0,
        pending: Pending { a: 0, b: 0 },
        alpha: default_alpha(),
        threshold: 1.0 / default_alpha(),
        reject: false,
        trajectory: Vec::new(),
        n_a: 1,
        n_b: 1,
        model: ModelSpec::default(),
        stop_signal: false,
        created_at: 0,
    }
}

/// One line of a session's persistence log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogRecord {
    Config { config: SessionConfig, created_at: u64 },
    Observation { observation: Observation },
    Stop,
}

/// Shared state behind the router.
#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    persist_dir: Option<PathBuf>,
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn io_err(e: std::io::Error) -> Error {
    Error::Internal(e.to_string())
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    /// State that appends every session event to `<dir>/<id>.jsonl` and
    /// rebuilds existing sessions from those files.
    pub fn with_persistence(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io_err)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&dir).map_err(io_err)? {
            let path = entry.map_err(io_err)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let session = replay_log(&path)?;
            sessions.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        Ok(Self {
            sessions: RwLock::new(sessions),
            persist_dir: Some(dir),
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    fn append(&self, id: &str, record: &LogRecord) -> Result<()> {
        let Some(dir) = &self.persist_dir else {
            return Ok(());
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(format!("{id}.jsonl")))
            .map_err(io_err)?;
        let line = serde_json::to_string(record).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(f, "{line}").map_err(io_err)
    }

    fn get(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.read().expect("session map poisoned").get(id).cloned()
    }

    pub fn create(&self, config: SessionConfig) -> Result<Arc<Snapshot>> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let created_at = now_secs();
        let session = Session::new(id.clone(), config.clone(), created_at)?;
        self.append(&id, &LogRecord::Config { config, created_at })?;
        let snap = Arc::clone(&session.snapshot);
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(snap)
    }

    pub fn snapshot(&self, id: &str) -> Option<Arc<Snapshot>> {
        self.get(id)
            .map(|s| Arc::clone(&s.lock().expect("session poisoned").snapshot))
    }

    pub fn observe(&self, id: &str, obs: Observation) -> std::result::Result<Arc<Snapshot>, ApiError> {
        let session = self.get(id).ok_or(ApiError::NotFound)?;
        obs.validate().map_err(ApiError::from)?;
        let mut s = session.lock().expect("session poisoned");
        if s.status != SessionStatus::Running {
            return Err(ApiError::Conflict(format!("session is {:?}", s.status)));
        }
        s.observe(&obs)?;
        self.append(id, &LogRecord::Observation { observation: obs })?;
        Ok(Arc::clone(&s.snapshot))
    }

    pub fn stop(&self, id: &str) -> std::result::Result<Arc<Snapshot>, ApiError> {
        let session = self.get(id).ok_or(ApiError::NotFound)?;
        let mut s = session.lock().expect("session poisoned");
        if s.status == SessionStatus::Running {
            s.stop();
            self.append(id, &LogRecord::Stop)?;
        }
        Ok(Arc::clone(&s.snapshot))
    }
}

fn replay_log(path: &Path) -> Result<Session> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| invalid(format!("bad session file name {}", path.display())))?
        .to_string();
    let reader = BufReader::new(std::fs::File::open(path).map_err(io_err)?);
    let mut session: Option<Session> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = serde_json::from_str(&line)
            .map_err(|e| invalid(format!("{} line {}: {e}", path.display(), i + 1)))?;
        match (record, session.as_mut()) {
            (LogRecord::Config { config, created_at }, None) => {
                session = Some(Session::new(id.clone(), config, created_at)?);
            }
            (LogRecord::Observation { observation }, Some(s)) => s.observe(&observation)?,
            (LogRecord::Stop, Some(s)) => s.stop(),
            _ => return Err(invalid(format!("{} line {}: unexpected record", path.display(), i + 1))),
        }
    }
    session.ok_or_else(|| invalid(format!("{} has no config record", path.display())))
}

/// Error responses: `{"error": "..."}` with the matching status code.
#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound,
    Conflict(String),
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Internal(msg) => ApiError::Internal(msg),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, msg) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound => (StatusCode::NOT_FOUND, "unknown session".to_string()),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (code, Json(serde_json::json!({ "error": msg }))).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

type Shared = Arc<AppState>;

async fn create_session(State(state): State<Shared>, body: Bytes) -> std::result::Result<Response, ApiError> {
    let config: SessionConfig = if body.iter().all(u8::is_ascii_whitespace) {
        SessionConfig::default()
    } else {
        parse_body(&body)?
    };
    let snap = state.create(config)?;
    Ok((StatusCode::CREATED, Json(snap)).into_response())
}

async fn get_session(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> std::result::Result<Json<Arc<Snapshot>>, ApiError> {
    state.snapshot(&id).map(Json).ok_or(ApiError::NotFound)
}

async fn post_observation(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> std::result::Result<Json<Arc<Snapshot>>, ApiError> {
    if state.get(&id).is_none() {
        return Err(ApiError::NotFound);
    }
    let obs: Observation = parse_body(&body)?;
    state.observe(&id, obs).map(Json)
}

async fn delete_session(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> std::result::Result<Json<Arc<Snapshot>>, ApiError> {
    state.stop(&id).map(Json)
}

/// Builds the router. `allowed_origin = None` allows any origin.
pub fn router(state: Shared, allowed_origin: Option<&str>) -> Result<Router> {
    let cors = match allowed_origin {
        None => CorsLayer::permissive(),
        Some(origin) => {
            let value = HeaderValue::from_str(origin).map_err(|e| invalid(format!("bad origin: {e}")))?;
            CorsLayer::very_permissive().allow_origin(value)
        }
    };
    Ok(Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session).delete(delete_session))
        .route("/sessions/:id/observations", post(post_observation))
        .layer(cors)
        .with_state(state))
}

/// Serves until the process is killed.
pub async fn serve(addr: SocketAddr, state: Shared, allowed_origin: Option<&str>) -> Result<()> {
    let app = router(state, allowed_origin)?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(io_err)?;
    eprintln!("listening on {}", listener.local_addr().map_err(io_err)?);
    axum::serve(listener, app).await.map_err(io_err)
}
