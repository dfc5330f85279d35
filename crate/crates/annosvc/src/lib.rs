//! REST service for the human evaluation of generated questions.
//!
//! Raters fetch the items of an [`EvaluationBatch`], submit relevance,
//! answerability and Bloom-level judgments, and read the current
//! inter-rater agreement. Annotations live in a CSV log that the offline
//! agreement tooling reads directly.

mod store;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use vidqg_core::agreement::{agreement_report, AgreementReport, AnnotationRecord, BloomLevel, EvaluationBatch, MetricLevel};
use vidqg_core::harness::PromptMode;
use vidqg_core::textproc::split_sentences;

pub use store::AnnotationStore;

pub const DEFAULT_EXCERPT_SENTENCES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("{}:{line}: corrupt annotation store ({message}): {content}", path.display())]
    CorruptStore {
        path: PathBuf,
        line: usize,
        content: String,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] vidqg_core::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub batch_path: PathBuf,
    pub store_path: PathBuf,
    pub bind: String,
    /// Origins allowed by CORS; empty allows any origin.
    pub cors_origins: Vec<String>,
    pub excerpt_sentences: usize,
}

impl ServiceConfig {
    pub fn new(batch_path: impl Into<PathBuf>, store_path: impl Into<PathBuf>) -> Self {
        Self {
            batch_path: batch_path.into(),
            store_path: store_path.into(),
            bind: "127.0.0.1:8080".into(),
            cors_origins: Vec::new(),
            excerpt_sentences: DEFAULT_EXCERPT_SENTENCES,
        }
    }
}

/// Per-rater completion of the batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItemView {
    pub item_id: String,
    pub video_id: String,
    pub model: String,
    pub mode: PromptMode,
    pub question: String,
    pub transcript_excerpt: String,
    pub progress: BTreeMap<String, Progress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub items: Vec<BatchItemView>,
}

/// Body of `POST /api/annotations`; the server stamps the time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSubmission {
    pub rater_id: String,
    pub item_id: String,
    pub relevance: bool,
    pub answerability: bool,
    pub bloom: BloomLevel,
}

pub struct AppState {
    batch: EvaluationBatch,
    excerpts: BTreeMap<String, String>,
    store: AnnotationStore,
}

impl AppState {
    pub fn new(batch: EvaluationBatch, store: AnnotationStore, excerpt_sentences: usize) -> Self {
        let excerpts = batch
            .videos
            .iter()
            .map(|v| {
                let sentences = split_sentences(&v.transcript);
                (v.id.clone(), sentences.into_iter().take(excerpt_sentences).collect::<Vec<_>>().join(" "))
            })
            .collect();
        Self { batch, excerpts, store }
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }

    fn progress(&self) -> BTreeMap<String, Progress> {
        let total = self.batch.items.len();
        let mut out: BTreeMap<String, Progress> = BTreeMap::new();
        for r in self.store.records() {
            out.entry(r.rater_id).or_insert(Progress { completed: 0, total }).completed += 1;
        }
        out
    }

    fn view(&self, index: usize, progress: &BTreeMap<String, Progress>) -> BatchItemView {
        let item = &self.batch.items[index];
        BatchItemView {
            item_id: item.item_id.clone(),
            video_id: item.video_id.clone(),
            model: item.model.clone(),
            mode: item.mode,
            question: item.question.clone(),
            transcript_excerpt: self.excerpts.get(&item.video_id).cloned().unwrap_or_default(),
            progress: progress.clone(),
        }
    }
}

type Shared = Arc<AppState>;

enum ApiError {
    NotFound(String),
    BadRequest(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(serde_json::json!({ "error": message }))).into_response()
    }
}

async fn get_batch(State(state): State<Shared>) -> Json<BatchView> {
    let progress = state.progress();
    Json(BatchView {
        items: (0..state.batch.items.len()).map(|i| state.view(i, &progress)).collect(),
    })
}

async fn get_item(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<BatchItemView>, ApiError> {
    let index = state
        .batch
        .items
        .iter()
        .position(|i| i.item_id == id)
        .ok_or_else(|| ApiError::NotFound(format!("no item {id:?}")))?;
    Ok(Json(state.view(index, &state.progress())))
}

async fn post_annotation(
    State(state): State<Shared>,
    Json(body): Json<AnnotationSubmission>,
) -> Result<StatusCode, ApiError> {
    if body.rater_id.trim().is_empty() {
        return Err(ApiError::BadRequest("rater_id must not be empty".into()));
    }
    if state.batch.item(&body.item_id).is_none() {
        return Err(ApiError::NotFound(format!("no item {:?}", body.item_id)));
    }
    let record = AnnotationRecord {
        rater_id: body.rater_id,
        item_id: body.item_id,
        relevance: body.relevance,
        answerability: body.answerability,
        bloom: body.bloom,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
    };
    let writer = Arc::clone(&state);
    tokio::task::spawn_blocking(move || writer.store.upsert(record))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
struct RaterFilter {
    rater_id: Option<String>,
}

async fn list_annotations(State(state): State<Shared>, Query(filter): Query<RaterFilter>) -> Json<Vec<AnnotationRecord>> {
    let mut records = state.store.records();
    if let Some(rater) = filter.rater_id {
        records.retain(|r| r.rater_id == rater);
    }
    Json(records)
}

async fn get_agreement(State(state): State<Shared>) -> Json<AgreementReport> {
    Json(agreement_report(&state.store.records(), MetricLevel::Nominal))
}

pub fn router(state: Shared, cors_origins: &[String]) -> Router {
    let origins = if cors_origins.is_empty() {
        AllowOrigin::from(Any)
    } else {
        AllowOrigin::list(cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    let cors = CorsLayer::new().allow_origin(origins).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/api/batch", get(get_batch))
        .route("/api/items/{id}", get(get_item))
        .route("/api/annotations", get(list_annotations).post(post_annotation))
        .route("/api/agreement", get(get_agreement))
        .layer(cors)
        .with_state(state)
}

/// Loads the batch and store, then serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let batch = EvaluationBatch::load(&config.batch_path)?;
    let store = AnnotationStore::open(&config.store_path)?;
    let state = Arc::new(AppState::new(batch, store, config.excerpt_sentences));
    let app = router(state, &config.cors_origins);
    let bind_err = |e| ServiceError::Bind { addr: config.bind.clone(), source: e };
    let addr: SocketAddr = config
        .bind
        .parse()
        .map_err(|e| bind_err(std::io::Error::new(std::io::ErrorKind::InvalidInput, e)))?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(bind_err)?;
    axum::serve(listener, app).await.map_err(|e| ServiceError::Io { path: PathBuf::from(&config.bind), source: e })
}
