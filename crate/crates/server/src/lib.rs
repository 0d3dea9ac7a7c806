//! HTTP service for annotation sessions.
//!
//! All sessions share one append-only event log. Every accepted label is
//! written to the log before the in-memory session changes, so restarting the
//! server over the same log reproduces the same state.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use stancelab_core::annotation::{
    cohen_kappa, AgreementResult, AnnotationError, AnnotationSession, LabelEvent,
};
use stancelab_core::jsonl::{self, JsonlError};
use stancelab_core::Label;
use tower_http::services::ServeDir;

const PLACEHOLDER_INDEX: &str = include_str!("../assets/index.html");

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {session_id:?} lists item {sentence_id:?}, which is not in the item pool")]
    UnknownItem {
        session_id: String,
        sentence_id: String,
    },
    #[error("duplicate session id {0:?}")]
    DuplicateSession(String),
    #[error("invalid label {0:?}; expected helpful, harmful or neither")]
    InvalidLabel(String),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("event log: {0}")]
    Log(#[from] JsonlError),
    #[error("event log {path}: {source}")]
    LogWrite {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("event log line {line} refers to unknown session {session_id:?}")]
    OrphanEvent { line: usize, session_id: String },
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidLabel(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Annotation(e) => match e {
                AnnotationError::UnknownSentence { .. } => StatusCode::NOT_FOUND,
                AnnotationError::ItemSetMismatch(..)
                | AnnotationError::IncompleteSession { .. }
                | AnnotationError::DegenerateMarginals
                | AnnotationError::Empty => StatusCode::CONFLICT,
                _ => StatusCode::BAD_REQUEST,
            },
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub session_id: String,
    pub annotator_id: String,
    /// Subset of the item pool, in presentation order; all items when absent.
    #[serde(default)]
    pub items: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub sentence_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub annotator_id: String,
    pub total: usize,
    pub labeled: usize,
    pub next: Option<Item>,
    pub counts: BTreeMap<Label, usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LabelRequest {
    pub sentence_id: String,
    pub label: String,
}

/// Sessions plus their event log. Not synchronized; [`router`] wraps it in a
/// mutex so that mutations, and log appends, are serialized.
pub struct AnnotationService {
    sessions: BTreeMap<String, AnnotationSession>,
    texts: HashMap<String, String>,
    log: Option<(PathBuf, File)>,
}

impl AnnotationService {
    /// Sessions without an explicit item list cover all `items`, in the
    /// given order. An existing log at `log_path` is replayed before new
    /// events are appended to it.
    pub fn open(
        specs: &[SessionSpec],
        items: &[Item],
        log_path: Option<&Path>,
    ) -> Result<Self, ServiceError> {
        let ids: Vec<String> = items.iter().map(|i| i.sentence_id.clone()).collect();
        let mut sessions = BTreeMap::new();
        for spec in specs {
            let session_items = match &spec.items {
                Some(list) => {
                    if let Some(missing) = list.iter().find(|i| !ids.contains(i)) {
                        return Err(ServiceError::UnknownItem {
                            session_id: spec.session_id.clone(),
                            sentence_id: missing.clone(),
                        });
                    }
                    list.clone()
                }
                None => ids.clone(),
            };
            let s = AnnotationSession::new(&spec.session_id, &spec.annotator_id, session_items)?;
            if sessions.insert(spec.session_id.clone(), s).is_some() {
                return Err(ServiceError::DuplicateSession(spec.session_id.clone()));
            }
        }
        let log = match log_path {
            Some(path) => {
                if path.is_file() {
                    let events: Vec<LabelEvent> = jsonl::read(path)?;
                    for (i, e) in events.iter().enumerate() {
                        let s = sessions.get_mut(&e.session_id).ok_or_else(|| {
                            ServiceError::OrphanEvent {
                                line: i + 1,
                                session_id: e.session_id.clone(),
                            }
                        })?;
                        s.apply(e)?;
                    }
                }
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|source| ServiceError::LogWrite {
                        path: path.to_path_buf(),
                        source,
                    })?;
                Some((path.to_path_buf(), file))
            }
            None => None,
        };
        Ok(Self {
            sessions,
            texts: items
                .iter()
                .map(|i| (i.sentence_id.clone(), i.text.clone()))
                .collect(),
            log,
        })
    }

    pub fn session(&self, id: &str) -> Result<&AnnotationSession, ServiceError> {
        self.sessions
            .get(id)
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &AnnotationSession> {
        self.sessions.values()
    }

    pub fn view(&self, id: &str) -> Result<SessionView, ServiceError> {
        let s = self.session(id)?;
        let mut counts: BTreeMap<Label, usize> = Label::ALL.iter().map(|&l| (l, 0)).collect();
        for label in s.labels.values() {
            *counts.entry(*label).or_default() += 1;
        }
        Ok(SessionView {
            session_id: s.session_id.clone(),
            annotator_id: s.annotator_id.clone(),
            total: s.items.len(),
            labeled: s.labels.len(),
            next: s.next_unlabeled().map(|sid| Item {
                sentence_id: sid.to_string(),
                text: self.texts.get(sid).cloned().unwrap_or_default(),
            }),
            counts,
        })
    }

    /// Persists the label, then applies it; a relabel overwrites.
    pub fn record(
        &mut self,
        session_id: &str,
        sentence_id: &str,
        label: &str,
    ) -> Result<SessionView, ServiceError> {
        let session = self.session(session_id)?;
        let label: Label = label
            .parse()
            .map_err(|_| ServiceError::InvalidLabel(label.to_string()))?;
        if !session.items.iter().any(|i| i == sentence_id) {
            return Err(AnnotationError::UnknownSentence {
                session_id: session_id.to_string(),
                sentence_id: sentence_id.to_string(),
            }
            .into());
        }
        let event = session.event(sentence_id, label);
        if let Some((path, file)) = &mut self.log {
            let mut line = serde_json::to_vec(&event).expect("event serializes");
            line.push(b'\n');
            file.write_all(&line)
                .and_then(|()| file.sync_data())
                .map_err(|source| ServiceError::LogWrite {
                    path: path.clone(),
                    source,
                })?;
        }
        self.sessions
            .get_mut(session_id)
            .expect("checked above")
            .apply(&event)?;
        self.view(session_id)
    }

    pub fn agreement(&self, a: &str, b: &str) -> Result<AgreementResult, ServiceError> {
        Ok(cohen_kappa(self.session(a)?, self.session(b)?)?)
    }
}

pub type SharedService = Arc<Mutex<AnnotationService>>;

#[derive(Debug, Deserialize)]
struct AgreementQuery {
    a: String,
    b: String,
}

async fn list_sessions(State(svc): State<SharedService>) -> Json<Vec<SessionView>> {
    let svc = svc.lock().unwrap();
    Json(
        svc.sessions()
            .map(|s| svc.view(&s.session_id).expect("listed session exists"))
            .collect(),
    )
}

async fn get_next(
    State(svc): State<SharedService>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ServiceError> {
    svc.lock().unwrap().view(&id).map(Json)
}

async fn post_label(
    State(svc): State<SharedService>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<LabelRequest>,
) -> Result<Json<SessionView>, ServiceError> {
    svc.lock()
        .unwrap()
        .record(&id, &req.sentence_id, &req.label)
        .map(Json)
}

async fn get_agreement(
    State(svc): State<SharedService>,
    Query(q): Query<AgreementQuery>,
) -> Result<Json<AgreementResult>, ServiceError> {
    svc.lock().unwrap().agreement(&q.a, &q.b).map(Json)
}

/// API routes, plus static UI assets from `static_dir` (or a built-in page).
pub fn router(svc: SharedService, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/sessions", get(list_sessions))
        .route("/api/sessions/{id}/next", get(get_next))
        .route("/api/sessions/{id}/labels", post(post_label))
        .route("/api/agreement", get(get_agreement))
        .with_state(svc);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER_INDEX) })),
    }
}

/// Serves until the process is stopped.
pub async fn serve(
    addr: SocketAddr,
    svc: AnnotationService,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let app = router(Arc::new(Mutex::new(svc)), static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}
