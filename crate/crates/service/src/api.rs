//! HTTP JSON API. Every error body is the `{code, message, detail}`
//! envelope.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hvd_core::annotate::{AnnotationStore, AnnotationTask, Label, QueuePolicy, Role, Stage, Strategy};
use hvd_core::corpus::Review;
use hvd_core::eval::{render_report, EvalReport, ReportFormat};
use hvd_core::models::Family;
use hvd_core::taxonomy::{catalog, ViolationCategory};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Config;
use crate::error::{Kind, ServiceError};
use crate::jobs::{write_atomic, JobContext, JobRegistry, JobRequest, JobStatus, REPORTS_DIR};
use crate::pipeline::{self, ClassifyResult, LoadedModel, Resources};

/// Snapshot the annotation store after this many writes.
const SNAPSHOT_EVERY: usize = 100;

/// Shared server state.
pub struct AppState {
    pub config: Config,
    pub resources: Resources,
    pub grids: std::collections::BTreeMap<Family, hvd_core::eval::Grid>,
    store: Mutex<StoreState>,
    model: RwLock<Option<(PathBuf, Arc<LoadedModel>)>>,
    /// Latest model probability per queued review, for uncertainty ranking.
    scores: RwLock<HashMap<String, f64>>,
    pub jobs: Arc<JobRegistry>,
}

struct StoreState {
    store: AnnotationStore,
    writes: usize,
}

impl AppState {
    /// Opens the annotation store and job registry under the configured
    /// data directory and loads the configured model, if any.
    pub fn open(config: Config) -> Result<Arc<AppState>, ServiceError> {
        let resources = Resources::from_config(&config)?;
        let grids = config.grids()?;
        let dir = &config.server.data_dir;
        let store = AnnotationStore::open(&dir.join("annotations"))?;
        let jobs = Arc::new(JobRegistry::open(dir)?);
        let state = Arc::new(AppState {
            grids,
            resources,
            store: Mutex::new(StoreState { store, writes: 0 }),
            model: RwLock::new(None),
            scores: RwLock::new(HashMap::new()),
            jobs,
            config,
        });
        if let Some(path) = state.config.server.model.clone() {
            state.activate_model(&path)?;
        }
        Ok(state)
    }

    /// Serves the artifact at `path` and rescores the open tasks with it.
    pub fn activate_model(&self, path: &std::path::Path) -> Result<(), ServiceError> {
        let model = Arc::new(LoadedModel::load(path)?);
        *self.model.write().expect("model lock") = Some((path.to_path_buf(), Arc::clone(&model)));
        let open: Vec<Review> = {
            let s = self.store.lock().expect("store lock");
            s.store
                .tasks()
                .filter(|t| matches!(t.stage, Stage::Unlabeled | Stage::Labeled | Stage::Conflict))
                .map(|t| t.review.clone())
                .collect()
        };
        self.scores.write().expect("scores lock").clear();
        self.score(&model, &open);
        Ok(())
    }

    fn served(&self) -> Option<(PathBuf, Arc<LoadedModel>)> {
        self.model.read().expect("model lock").clone()
    }

    /// Best effort: a failure leaves the reviews unscored.
    fn score(&self, model: &LoadedModel, reviews: &[Review]) {
        match pipeline::classify(&self.resources, model, reviews) {
            Ok(results) => {
                let mut scores = self.scores.write().expect("scores lock");
                for r in results {
                    scores.insert(r.review_id, r.probability);
                }
            }
            Err(e) => log::warn!("cannot score {} queued reviews: {e}", reviews.len()),
        }
    }

    fn job_context(&self) -> JobContext {
        JobContext {
            resources: self.resources.clone(),
            grids: self.grids.clone(),
            data_dir: self.config.server.data_dir.clone(),
            default_data: self.config.data.labeled.clone(),
            seed: self.config.defaults.seed,
            folds: self.config.defaults.folds,
            served_model: self.served().map(|(p, _)| p),
        }
    }

    fn with_store<T>(&self, f: impl FnOnce(&mut AnnotationStore) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        let mut s = self.store.lock().expect("store lock");
        let out = f(&mut s.store)?;
        s.writes += 1;
        if s.writes % SNAPSHOT_EVERY == 0 {
            if let Err(e) = s.store.snapshot() {
                log::warn!("annotation snapshot failed: {e}");
            }
        }
        Ok(out)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/reviews", post(post_reviews))
        .route("/classify", post(post_classify))
        .route("/jobs", post(post_job).get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/reports/{id}", get(get_report))
        .route("/annotations/next", get(next_annotation))
        .route("/annotations", post(post_annotation))
        .route("/annotations/{review_id}/resolve", post(resolve_annotation))
        .route("/annotations/stats", get(annotation_stats))
        .route("/taxonomy", get(taxonomy))
        .route("/metrics/live", get(live_metrics))
        .fallback(not_found)
        .with_state(state)
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.envelope())).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;
type Shared = State<Arc<AppState>>;

async fn not_found() -> ServiceError {
    ServiceError::not_found("not_found", "no such resource")
}

/// Parses a JSON body; syntax errors and schema mismatches are both 400.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        let code = if e.is_syntax() || e.is_eof() {
            "malformed_json"
        } else {
            "invalid_request"
        };
        let err = ServiceError::bad_input(code, e.to_string());
        if e.line() == 0 {
            err
        } else {
            err.with_detail("line", e.line()).with_detail("column", e.column())
        }
    })
}

/// Runs CPU or network bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::internal(format!("worker panicked: {e}")))?
}

/// A bare array or an object with a `reviews` array.
#[derive(Deserialize)]
#[serde(untagged)]
enum ReviewBatch {
    Bare(Vec<Review>),
    Wrapped {
        reviews: Vec<Review>,
        #[serde(default)]
        model: Option<PathBuf>,
    },
}

impl ReviewBatch {
    fn split(self) -> (Vec<Review>, Option<PathBuf>) {
        match self {
            ReviewBatch::Bare(r) => (r, None),
            ReviewBatch::Wrapped { reviews, model } => (reviews, model),
        }
    }
}

#[derive(Serialize)]
struct IngestRejection {
    index: usize,
    id: String,
    reason: String,
}

/// Bulk ingest: valid new reviews are appended to the corpus file and
/// queued for annotation.
async fn post_reviews(State(state): Shared, body: Bytes) -> ApiResult<Json<Value>> {
    let (reviews, _) = parse_body::<ReviewBatch>(&body)?.split();
    blocking(move || {
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        state.with_store(|store| {
            for (index, review) in reviews.into_iter().enumerate() {
                let problem = match review.validate() {
                    Err(reason) => Some(reason),
                    Ok(()) if store.get(&review.id).is_some() => Some(format!("duplicate id {}", review.id)),
                    Ok(()) => None,
                };
                match problem {
                    Some(reason) => rejected.push(IngestRejection {
                        index,
                        id: review.id,
                        reason,
                    }),
                    None => {
                        store.enqueue(review.clone())?;
                        accepted.push(review);
                    }
                }
            }
            Ok(())
        })?;
        append_corpus(&state, &accepted)?;
        if let Some((_, model)) = state.served() {
            state.score(&model, &accepted);
        }
        Ok(Json(json!({ "accepted": accepted.len(), "rejected": rejected })))
    })
    .await
}

fn append_corpus(state: &AppState, reviews: &[Review]) -> ApiResult<()> {
    use std::io::Write;
    if reviews.is_empty() {
        return Ok(());
    }
    let path = state.config.server.data_dir.join("corpus.jsonl");
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| ServiceError::io(&path, &e))?;
    let mut bytes = Vec::new();
    pipeline::write_jsonl(reviews, &mut bytes)?;
    file.write_all(&bytes).map_err(|e| ServiceError::io(&path, &e))
}

#[derive(Serialize)]
struct ClassifyResponse {
    results: Vec<ClassifyResult>,
}

async fn post_classify(State(state): Shared, body: Bytes) -> ApiResult<Json<ClassifyResponse>> {
    let (reviews, model_path) = parse_body::<ReviewBatch>(&body)?.split();
    let cap = state.config.server.classify_cap;
    if reviews.len() > cap {
        return Err(ServiceError::new(
            Kind::TooLarge,
            "batch_too_large",
            format!("{} reviews exceed the synchronous cap of {cap}; submit a CLASSIFY_BATCH job", reviews.len()),
        )
        .with_detail("cap", cap)
        .with_detail("received", reviews.len()));
    }
    for (i, r) in reviews.iter().enumerate() {
        r.validate()
            .map_err(|reason| ServiceError::bad_input("invalid_review", reason).with_detail("index", i))?;
    }
    blocking(move || {
        let model = match model_path {
            Some(p) => Arc::new(LoadedModel::load(&p)?),
            None => {
                state
                    .served()
                    .ok_or_else(|| ServiceError::not_found("model_not_found", "no model is being served"))?
                    .1
            }
        };
        let results = pipeline::classify(&state.resources, &model, &reviews)?;
        Ok(Json(ClassifyResponse { results }))
    })
    .await
}

async fn post_job(State(state): Shared, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let request: JobRequest = parse_body(&body)?;
    let record = state.jobs.create(request)?;
    let done_state = Arc::clone(&state);
    state.jobs.spawn(record.job_id.clone(), state.job_context(), move |output| {
        if let Some(path) = output.activate_model {
            if let Err(e) = done_state.activate_model(&path) {
                log::warn!("cannot serve {}: {e}", path.display());
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(serde_json::to_value(record).expect("record serializes"))))
}

async fn list_jobs(State(state): Shared) -> Json<Value> {
    Json(json!({ "jobs": state.jobs.list() }))
}

async fn get_job(State(state): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let record = state
        .jobs
        .get(&id)
        .ok_or_else(|| ServiceError::not_found("job_not_found", format!("no job {id}")).with_detail("job_id", id))?;
    Ok(Json(serde_json::to_value(record).expect("record serializes")))
}

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

/// `id` is a job id or `latest` (the most recent finished evaluation).
async fn get_report(State(state): Shared, UrlPath(id): UrlPath<String>, Query(q): Query<ReportQuery>) -> ApiResult<Response> {
    let format: ReportFormat = q.format.as_deref().unwrap_or("json").parse()?;
    let dir = state.config.server.data_dir.join(REPORTS_DIR);
    let id = if id == "latest" {
        latest_report(&state).ok_or_else(|| ServiceError::not_found("report_not_found", "no report yet"))?
    } else {
        id
    };
    if id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(ServiceError::not_found("report_not_found", format!("no report {id}")));
    }
    let path = dir.join(format!("{id}.json"));
    let text = std::fs::read_to_string(&path)
        .map_err(|_| ServiceError::not_found("report_not_found", format!("no report {id}")).with_detail("report_id", id.clone()))?;
    let report: EvalReport = serde_json::from_str(&text).map_err(|e| ServiceError::internal(format!("{}: {e}", path.display())))?;
    let content_type = match format {
        ReportFormat::Json => "application/json",
        ReportFormat::Csv => "text/csv; charset=utf-8",
        ReportFormat::Text => "text/plain; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], render_report(&report, format)).into_response())
}

/// The most recently written report.
fn latest_report(state: &AppState) -> Option<String> {
    let dir = state.config.server.data_dir.join(REPORTS_DIR);
    std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| {
            let e = e.ok()?;
            let name = e.file_name().into_string().ok()?;
            let id = name.strip_suffix(".json")?.to_string();
            Some((e.metadata().ok()?.modified().ok()?, id))
        })
        .max()
        .map(|(_, id)| id)
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
    strategy: Option<String>,
    role: Option<String>,
}

#[derive(Serialize)]
struct NextTask {
    task: AnnotationTask,
    role: Role,
    strategy: Strategy,
    #[serde(skip_serializing_if = "Option::is_none")]
    probability: Option<f64>,
    /// Dictionary terms found in the review text.
    keywords: Vec<String>,
}

/// Next task for the annotator; 204 when nothing is eligible. Unscored
/// tasks come after scored ones under UNCERTAINTY, so the queue also works
/// before any model is served.
async fn next_annotation(State(state): Shared, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    let annotator = q.annotator.filter(|a| !a.trim().is_empty()).ok_or_else(|| {
        ServiceError::bad_input("annotator_required", "query parameter annotator is required")
    })?;
    let strategy = match q.strategy {
        Some(s) => s.parse().map_err(|e: String| ServiceError::bad_input("invalid_strategy", e))?,
        None => state.config.defaults.strategy,
    };
    let role: Role = match q.role {
        Some(r) => r.parse().map_err(|e: String| ServiceError::bad_input("invalid_role", e))?,
        None => Role::Labeler,
    };
    let scores = state.scores.read().expect("scores lock").clone();
    let policy = match strategy {
        Strategy::Fifo => QueuePolicy::fifo(),
        Strategy::Uncertainty => QueuePolicy::uncertainty(&scores),
    };
    let task = {
        let s = state.store.lock().expect("store lock");
        s.store.next_task(&policy, &annotator, role).cloned()
    };
    let Some(task) = task else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let keywords = state.resources.dictionary.matches(&task.review.text, &state.resources.stoplist);
    let next = NextTask {
        probability: scores.get(&task.review_id).copied(),
        task,
        role,
        strategy,
        keywords,
    };
    Ok(Json(next).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    review_id: String,
    violation: bool,
    #[serde(default)]
    categories: Vec<ViolationCategory>,
    annotator: String,
    /// Inferred from the task stage when omitted: UNLABELED takes a first
    /// label, anything else a validation.
    #[serde(default)]
    role: Option<Role>,
    #[serde(default)]
    round: Option<u32>,
}

async fn post_annotation(State(state): Shared, body: Bytes) -> ApiResult<Json<AnnotationTask>> {
    let req: LabelRequest = parse_body(&body)?;
    let task = state.with_store(|store| {
        let role = match req.role {
            Some(r) => r,
            None => match store.get(&req.review_id).map(|t| t.stage) {
                Some(Stage::Unlabeled) => Role::Labeler,
                _ => Role::Validator,
            },
        };
        let mut label = Label::new(req.violation, req.annotator).with_categories(req.categories);
        label.round = req.round;
        Ok(store.submit_label(&req.review_id, label, role)?.clone())
    })?;
    Ok(Json(task))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolveRequest {
    violation: bool,
    #[serde(default)]
    categories: Vec<ViolationCategory>,
    note: String,
    #[serde(default)]
    resolver: Option<String>,
}

async fn resolve_annotation(State(state): Shared, UrlPath(review_id): UrlPath<String>, body: Bytes) -> ApiResult<Json<AnnotationTask>> {
    let req: ResolveRequest = parse_body(&body)?;
    let task = state.with_store(|store| {
        Ok(store
            .resolve_conflict(&review_id, req.violation, req.categories, &req.note, req.resolver.as_deref())?
            .clone())
    })?;
    Ok(Json(task))
}

async fn annotation_stats(State(state): Shared) -> Json<Value> {
    let stats = state.store.lock().expect("store lock").store.agreement_stats();
    Json(serde_json::to_value(stats).expect("stats serialize"))
}

async fn taxonomy() -> Json<Value> {
    Json(json!({ "categories": catalog() }))
}

async fn live_metrics(State(state): Shared) -> Json<Value> {
    let annotations = state.store.lock().expect("store lock").store.agreement_stats();
    let mut jobs: std::collections::BTreeMap<&str, usize> = ["PENDING", "RUNNING", "DONE", "FAILED"].map(|s| (s, 0)).into();
    for j in state.jobs.list() {
        let key = match j.status {
            JobStatus::Pending => "PENDING",
            JobStatus::Running => "RUNNING",
            JobStatus::Done => "DONE",
            JobStatus::Failed => "FAILED",
        };
        *jobs.entry(key).or_default() += 1;
    }
    Json(json!({
        "annotations": annotations,
        "jobs": jobs,
        "model_ref": state.served().map(|(_, m)| m.model_ref.clone()),
        "scored_reviews": state.scores.read().expect("scores lock").len(),
        "latest_report": latest_report(&state),
    }))
}

/// Binds and serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>) -> Result<(), ServiceError> {
    let addr = format!("{}:{}", state.config.server.bind, state.config.server.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| ServiceError::internal(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::internal(e.to_string()))
}

/// Writes a report where `GET /reports/{id}` finds it.
pub fn store_report(state: &AppState, id: &str, report: &EvalReport) -> Result<(), ServiceError> {
    let path = state.config.server.data_dir.join(REPORTS_DIR).join(format!("{id}.json"));
    write_atomic(&path, render_report(report, ReportFormat::Json).as_bytes())
}
