//! HTTP service for live tutoring sessions.
//!
//! Endpoints (JSON bodies):
//!
//! | method | path                          |                                   |
//! |--------|-------------------------------|-----------------------------------|
//! | GET    | `/api/curriculum`             | sections and concepts             |
//! | POST   | `/api/sessions`               | start a session on one section    |
//! | GET    | `/api/sessions/{id}/next`     | current recommendation            |
//! | POST   | `/api/sessions/{id}/answer`   | answer the current recommendation |
//! | GET    | `/api/sessions/{id}/state`    | bandit internals, read-only       |
//!
//! Anything else is served from the static directory, if one is configured.
//!
//! Each session sits behind its own async mutex, so requests to one session
//! are serialized while different sessions proceed independently. Every
//! state change is persisted before the response is sent; sessions missing
//! from memory are reloaded from the store on first use.

pub mod store;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

use bandit_tutor_core::session::{
    ConceptProgress, MasteryCause, SessionDiagnostics, SNAPSHOT_FORMAT,
};
use bandit_tutor_core::{ConceptId, Curriculum, ProblemId, SectionId, Session, SessionConfig, SessionError};

pub use store::{FileStore, MemoryStore, SessionRecord, SessionStore, StoreError};

/// Milliseconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    }
}

/// Seeds handed out by the server fit in 53 bits so browsers can echo them
/// back without rounding.
pub const MAX_GENERATED_SEED: u64 = (1 << 53) - 1;

pub struct AppState {
    curriculum: Arc<Curriculum>,
    curriculum_id: String,
    config: SessionConfig,
    store: Arc<dyn SessionStore>,
    clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Live>>>>,
}

struct Live {
    session: Session,
    curriculum_id: String,
    created_at_ms: u64,
    updated_at_ms: u64,
}

impl Live {
    fn record(&self) -> SessionRecord {
        SessionRecord {
            session_id: self.session.session_id().to_owned(),
            curriculum_id: self.curriculum_id.clone(),
            section_id: self.session.section_id().clone(),
            created_at_ms: self.created_at_ms,
            updated_at_ms: self.updated_at_ms,
            outstanding: self.session.outstanding().cloned(),
            snapshot: serde_json::from_str(&self.session.snapshot())
                .expect("snapshots are JSON"),
        }
    }

    /// Seconds since the session started, the engine's clock.
    fn elapsed(&self, now_ms: u64) -> f64 {
        now_ms.saturating_sub(self.created_at_ms) as f64 / 1000.0
    }
}

impl AppState {
    pub fn new(
        curriculum: Arc<Curriculum>,
        curriculum_id: impl Into<String>,
        config: SessionConfig,
        store: Arc<dyn SessionStore>,
    ) -> Self {
        Self {
            curriculum,
            curriculum_id: curriculum_id.into(),
            config,
            store,
            clock: Arc::new(SystemClock),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn curriculum_id(&self) -> &str {
        &self.curriculum_id
    }

    async fn persist(&self, record: SessionRecord) -> Result<(), ApiError> {
        let store = self.store.clone();
        tokio::task::spawn_blocking(move || store.save(&record))
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))?
            .map_err(|e| ApiError::Internal(e.to_string()))
    }

    /// In-memory session, or the persisted one loaded on first use.
    async fn slot(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Live>>, ApiError> {
        if let Some(s) = self.sessions.lock().unwrap().get(id) {
            return Ok(s.clone());
        }
        let store = self.store.clone();
        let key = id.to_owned();
        let record = tokio::task::spawn_blocking(move || store.load(&key))
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))?
            .map_err(|e| ApiError::Internal(e.to_string()))?
            .ok_or_else(|| ApiError::NotFound(format!("no session `{id}`")))?;
        if record.curriculum_id != self.curriculum_id {
            return Err(ApiError::NotFound(format!(
                "session `{id}` belongs to curriculum `{}`",
                record.curriculum_id
            )));
        }
        let session = Session::restore(&record.snapshot.to_string(), self.curriculum.clone())
            .map_err(|e| ApiError::Internal(format!("cannot restore `{id}`: {e}")))?;
        let live = Live {
            session,
            curriculum_id: record.curriculum_id,
            created_at_ms: record.created_at_ms,
            updated_at_ms: record.updated_at_ms,
        };
        let mut sessions = self.sessions.lock().unwrap();
        // Another request may have loaded it meanwhile; keep that one.
        Ok(sessions
            .entry(id.to_owned())
            .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(live)))
            .clone())
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict {
        message: String,
        progress: Option<Vec<ConceptProgress>>,
        complete: bool,
    },
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    progress: Option<&'a [ConceptProgress]>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    complete: bool,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message, progress, complete) = match &self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m, None, false),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m, None, false),
            ApiError::Conflict {
                message,
                progress,
                complete,
            } => (StatusCode::CONFLICT, message, progress.as_deref(), *complete),
            ApiError::Internal(m) => {
                tracing::error!("{m}");
                (StatusCode::INTERNAL_SERVER_ERROR, m, None, false)
            }
        };
        let body = ErrorBody {
            error: message,
            progress,
            complete,
        };
        (status, Json(body)).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    /// Optional; when given it must name the loaded curriculum.
    #[serde(default)]
    pub curriculum_id: Option<String>,
    pub section_id: SectionId,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub curriculum_id: String,
    pub section_id: SectionId,
    pub seed: u64,
    pub progress: Vec<ConceptProgress>,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub concept_id: ConceptId,
    pub problem_id: ProblemId,
    pub prompt: String,
    pub choices: Vec<String>,
    pub review: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRequest {
    pub problem_id: ProblemId,
    pub choice_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub correct: bool,
    pub concept_id: ConceptId,
    pub concept_mastered: Option<MasteryCause>,
    pub unlocked: Vec<ConceptId>,
    pub progress: Vec<ConceptProgress>,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateResponse {
    pub session_id: String,
    pub curriculum_id: String,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub snapshot_format: String,
    pub progress: Vec<ConceptProgress>,
    pub diagnostics: SessionDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumResponse {
    pub curriculum_id: String,
    pub sections: Vec<SectionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionSummary {
    pub id: SectionId,
    pub title: String,
    pub concepts: Vec<ConceptSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSummary {
    pub id: ConceptId,
    pub prerequisites: Vec<ConceptId>,
    pub problem_count: usize,
}

async fn get_curriculum(State(app): State<Arc<AppState>>) -> Json<CurriculumResponse> {
    let c = &app.curriculum;
    let sections = c
        .sections()
        .iter()
        .map(|s| SectionSummary {
            id: s.id.clone(),
            title: s.title.clone(),
            concepts: s
                .concept_ids
                .iter()
                .filter_map(|id| c.concept(id))
                .map(|k| ConceptSummary {
                    id: k.id.clone(),
                    prerequisites: k.prerequisite_ids.clone(),
                    problem_count: k.problem_ids.len(),
                })
                .collect(),
        })
        .collect();
    Json(CurriculumResponse {
        curriculum_id: app.curriculum_id.clone(),
        sections,
    })
}

fn new_session_id() -> String {
    format!("{:032x}", rand::rng().random::<u128>())
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<CreateSessionResponse>), ApiError> {
    let req: CreateSessionRequest = parse_body(&body)?;
    if let Some(id) = &req.curriculum_id {
        if id != &app.curriculum_id {
            return Err(ApiError::NotFound(format!("unknown curriculum `{id}`")));
        }
    }
    let seed = req
        .seed
        .unwrap_or_else(|| rand::rng().random_range(0..=MAX_GENERATED_SEED));
    let session = Session::start(
        app.curriculum.clone(),
        &req.section_id,
        app.config.clone(),
        seed,
    )
    .map_err(|e| match e {
        SessionError::UnknownSection(_) => ApiError::NotFound(e.to_string()),
        other => ApiError::Internal(other.to_string()),
    })?
    .with_session_id(new_session_id());

    let now = app.clock.now_ms();
    let live = Live {
        session,
        curriculum_id: app.curriculum_id.clone(),
        created_at_ms: now,
        updated_at_ms: now,
    };
    app.persist(live.record()).await?;
    let response = CreateSessionResponse {
        session_id: live.session.session_id().to_owned(),
        curriculum_id: app.curriculum_id.clone(),
        section_id: req.section_id,
        seed,
        progress: live.session.progress(),
        complete: live.session.is_complete(),
    };
    app.sessions.lock().unwrap().insert(
        response.session_id.clone(),
        Arc::new(tokio::sync::Mutex::new(live)),
    );
    Ok((StatusCode::CREATED, Json(response)))
}

fn next_response(rec: bandit_tutor_core::Recommendation) -> NextResponse {
    NextResponse {
        concept_id: rec.concept_id,
        problem_id: rec.problem_id,
        prompt: rec.prompt,
        choices: rec.choices,
        review: rec.review,
    }
}

async fn next_problem(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<NextResponse>, ApiError> {
    let slot = app.slot(&id).await?;
    let mut live = slot.lock().await;
    if live.session.outstanding().is_some() {
        // Repeats the cached recommendation without touching the generator.
        let rec = live.session.next_recommendation().map_err(internal)?;
        return Ok(Json(next_response(rec)));
    }
    if live.session.is_complete() {
        return Err(ApiError::Conflict {
            message: "session is complete".into(),
            progress: Some(live.session.progress()),
            complete: true,
        });
    }
    let mut session = live.session.clone();
    let rec = session.next_recommendation().map_err(internal)?;
    let mut updated = Live {
        session,
        curriculum_id: live.curriculum_id.clone(),
        created_at_ms: live.created_at_ms,
        updated_at_ms: app.clock.now_ms(),
    };
    app.persist(updated.record()).await?;
    std::mem::swap(&mut *live, &mut updated);
    Ok(Json(next_response(rec)))
}

fn internal(e: SessionError) -> ApiError {
    ApiError::Internal(e.to_string())
}

async fn answer(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<AnswerResponse>, ApiError> {
    let slot = app.slot(&id).await?;
    let req: AnswerRequest = parse_body(&body)?;
    let mut live = slot.lock().await;
    let conflict = |message: String, live: &Live| ApiError::Conflict {
        message,
        progress: Some(live.session.progress()),
        complete: live.session.is_complete(),
    };
    match live.session.outstanding() {
        None if live.session.is_complete() => {
            return Err(conflict("session is complete".into(), &live))
        }
        None => {
            return Err(conflict(
                "no recommendation is outstanding; fetch /next first".into(),
                &live,
            ))
        }
        Some(p) if p.problem_id != req.problem_id => {
            return Err(conflict(
                format!("problem `{}` is not the outstanding recommendation", req.problem_id),
                &live,
            ))
        }
        Some(_) => {}
    }
    let problem = app
        .curriculum
        .problem(&req.problem_id)
        .ok_or_else(|| ApiError::Internal(format!("outstanding problem `{}` missing", req.problem_id)))?;
    if req.choice_index >= problem.choices.len() {
        return Err(ApiError::BadRequest(format!(
            "choice_index {} out of range for {} choices",
            req.choice_index,
            problem.choices.len()
        )));
    }
    let correct = problem.is_correct(req.choice_index);

    let now = app.clock.now_ms();
    let mut session = live.session.clone();
    let report = session
        .record_answer(&req.problem_id, correct, live.elapsed(now))
        .map_err(internal)?;
    let mut updated = Live {
        session,
        curriculum_id: live.curriculum_id.clone(),
        created_at_ms: live.created_at_ms,
        updated_at_ms: now,
    };
    app.persist(updated.record()).await?;
    std::mem::swap(&mut *live, &mut updated);
    Ok(Json(AnswerResponse {
        correct,
        concept_id: report.concept_id,
        concept_mastered: report.concept_mastered,
        unlocked: report.unlocked,
        progress: live.session.progress(),
        complete: report.complete,
    }))
}

async fn session_state(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<StateResponse>, ApiError> {
    let slot = app.slot(&id).await?;
    let live = slot.lock().await;
    Ok(Json(StateResponse {
        session_id: live.session.session_id().to_owned(),
        curriculum_id: live.curriculum_id.clone(),
        created_at_ms: live.created_at_ms,
        updated_at_ms: live.updated_at_ms,
        snapshot_format: SNAPSHOT_FORMAT.to_owned(),
        progress: live.session.progress(),
        diagnostics: live.session.diagnostics(),
    }))
}

/// API routes, plus static files from `static_dir` for every other path.
pub fn router(app: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/curriculum", get(get_curriculum))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/next", get(next_problem))
        .route("/api/sessions/{id}/answer", post(answer))
        .route("/api/sessions/{id}/state", get(session_state))
        .with_state(app);
    let api = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.layer(TraceLayer::new_for_http())
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub host: String,
    pub port: u16,
    pub static_dir: Option<PathBuf>,
}

/// Binds and serves until Ctrl-C.
pub async fn serve(app: Arc<AppState>, options: ServeOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((options.host.as_str(), options.port)).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app, options.static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
