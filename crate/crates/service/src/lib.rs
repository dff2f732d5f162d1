//! JSON session API over one or more behavior databases.
//!
//! A session walks through exploration pages, trains a feature space on its
//! own pages (optionally pooled with the database's population log), then
//! elicits rankings and answers with a linear reward posterior and the
//! behaviors it currently rates highest. Requests for one session are
//! serialized on a fair mutex, so they apply in arrival order.
//!
//! ```no_run
//! # async fn demo() -> std::io::Result<()> {
//! use clea_service::{AppState, Dataset, ServiceConfig};
//! let db = clea::behaviors::generate_database(clea::Modality::Visual, 500, 6, 0).unwrap();
//! let state = AppState::new(ServiceConfig::default());
//! state.add_dataset(Dataset::new("visual", db));
//! clea_service::serve(state, "127.0.0.1:8080".parse().unwrap()).await
//! # }
//! ```

pub mod api;
mod error;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use clea::behaviors::{BehaviorDatabase, PayloadTable};
use clea::eval::QueryGenerator;
use clea::exploration::write_session_log;
use clea::features::{train_feature_space, FeatureTable, Hyper, Objective, TrainData};
use clea::reward::{decompose_ranking, LinearRewardPosterior, MhConfig, RankingRecord};
use clea::rng::{derive_seed, stream};
use clea::{BehaviorId, ExplorationPage};
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use api::*;
pub use error::ApiError;

/// Served API description, kept next to the crate.
pub const OPENAPI: &str = include_str!("../openapi.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub page_size: usize,
    pub query_size: usize,
    pub top_k: usize,
    pub encoder_hidden: Vec<usize>,
    /// Overrides the modality's default epoch budget when set.
    pub epochs: Option<usize>,
    pub mh: MhConfig,
    pub seed: u64,
    /// Browser origins allowed by CORS; empty allows any.
    pub allowed_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            page_size: 100,
            query_size: 5,
            top_k: 5,
            encoder_hidden: vec![64, 64],
            epochs: None,
            // Larger than the offline default: one posterior, refreshed per request.
            mh: MhConfig {
                samples: 400,
                burn_in: 500,
                ..MhConfig::default()
            },
            seed: 0,
            allowed_origins: vec![],
        }
    }
}

/// A database the service can open sessions on.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub db: BehaviorDatabase,
    pub payloads: PayloadTable,
    /// Payloads of an unrelated database, for the pretrained baseline.
    pub auxiliary: Option<PayloadTable>,
    /// Logged pages of earlier users, pooled into training on request.
    pub population: Vec<ExplorationPage>,
    /// Seeds for rank queries besides the session's own explored items.
    pub exemplars: Vec<BehaviorId>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, db: BehaviorDatabase) -> Self {
        Self {
            name: name.into(),
            payloads: db.payloads(),
            db,
            auxiliary: None,
            population: vec![],
            exemplars: vec![],
        }
    }

    /// Sets the population log; exemplars become its most explored items.
    pub fn with_population(mut self, pages: Vec<ExplorationPage>) -> Self {
        let mut counts: BTreeMap<BehaviorId, usize> = BTreeMap::new();
        for id in pages.iter().flat_map(|p| &p.explored) {
            *counts.entry(*id).or_default() += 1;
        }
        let mut ranked: Vec<_> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        self.exemplars = ranked.into_iter().take(20).map(|(id, _)| id).collect();
        self.population = pages;
        self
    }

    pub fn with_auxiliary(mut self, auxiliary: PayloadTable) -> Self {
        self.auxiliary = Some(auxiliary);
        self
    }
}

struct OpenPage {
    page_id: String,
    presented: Vec<BehaviorId>,
    order: Vec<BehaviorId>,
}

struct Model {
    table: FeatureTable,
    generator: QueryGenerator,
    posterior: LinearRewardPosterior,
    query: Option<Vec<BehaviorId>>,
}

struct Session {
    id: String,
    number: u64,
    data: Arc<Dataset>,
    pages: Vec<ExplorationPage>,
    open: Option<OpenPage>,
    page_rng: ChaCha8Rng,
    query_rng: ChaCha8Rng,
    status: TrainStatus,
    model: Option<Model>,
}

/// Shared service state; clones share everything.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    datasets: RwLock<BTreeMap<String, Arc<Dataset>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                datasets: RwLock::new(BTreeMap::new()),
                sessions: RwLock::new(HashMap::new()),
                counter: AtomicU64::new(0),
            }),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn add_dataset(&self, data: Dataset) {
        self.inner.datasets.write().expect("lock").insert(data.name.clone(), Arc::new(data));
    }

    fn dataset(&self, name: &str) -> Result<Arc<Dataset>, ApiError> {
        self.inner
            .datasets
            .read()
            .expect("lock")
            .get(name)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown database `{name}`")))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session `{id}`")))
    }
}

pub fn router(state: AppState) -> Router {
    let cors = if state.config().allowed_origins.is_empty() {
        CorsLayer::new().allow_origin(Any)
    } else {
        let origins: Vec<HeaderValue> = state.config().allowed_origins.iter().filter_map(|o| o.parse().ok()).collect();
        CorsLayer::new().allow_origin(AllowOrigin::list(origins))
    }
    .allow_methods(Any)
    .allow_headers(Any);

    Router::new()
        .route("/openapi.json", get(openapi))
        .route("/databases", get(list_databases))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(show_session))
        .route("/sessions/{id}/page", get(page))
        .route("/sessions/{id}/explore", post(explore))
        .route("/sessions/{id}/page/close", post(close_page))
        .route("/sessions/{id}/train", post(train).get(train_status))
        .route("/sessions/{id}/rank-query", get(rank_query))
        .route("/sessions/{id}/rank", post(rank))
        .route("/sessions/{id}/export", get(export))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn openapi() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], OPENAPI)
}

async fn list_databases(State(app): State<AppState>) -> Json<Vec<DatabaseInfo>> {
    let datasets = app.inner.datasets.read().expect("lock");
    Json(
        datasets
            .values()
            .map(|d| DatabaseInfo {
                name: d.name.clone(),
                modality: d.db.modality.to_string(),
                behaviors: d.db.len(),
                population_pages: d.population.len(),
            })
            .collect(),
    )
}

async fn create_session(
    State(app): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let Json(req) = body?;
    let data = app.dataset(&req.db)?;
    let number = app.inner.counter.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{number:04}");
    let seed = app.config().seed;
    let session = Session {
        id: id.clone(),
        number,
        pages: vec![],
        open: None,
        page_rng: stream(seed, "service-pages", number),
        query_rng: stream(seed, "service-queries", number),
        status: TrainStatus::idle(),
        model: None,
        data: data.clone(),
    };
    app.inner.sessions.write().expect("lock").insert(id.clone(), Arc::new(Mutex::new(session)));
    let created = SessionCreated {
        session_id: id,
        db: data.name.clone(),
        modality: data.db.modality.to_string(),
        behaviors: data.db.len(),
    };
    Ok((StatusCode::CREATED, Json(created)))
}

async fn show_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let session = app.session(&id)?;
    let s = session.lock().await;
    Ok(Json(SessionView {
        session_id: s.id.clone(),
        db: s.data.name.clone(),
        pages: s.pages.len(),
        open_page: s.open.as_ref().map(|p| p.page_id.clone()),
        training: s.status.clone(),
        comparisons: s.model.as_ref().map_or(0, |m| m.posterior.comparisons().len()),
    }))
}

fn page_view(s: &Session, open: &OpenPage) -> PageView {
    PageView {
        page_id: open.page_id.clone(),
        position: s.pages.len() + 1,
        behaviors: open
            .presented
            .iter()
            .map(|&id| PageItem {
                id,
                summary: summary(&s.data, id),
                explored: open.order.contains(&id),
            })
            .collect(),
    }
}

fn summary(data: &Dataset, id: BehaviorId) -> Vec<f64> {
    data.db.get(id).map(|b| b.summary.clone()).unwrap_or_default()
}

/// The open page, or a fresh one sampled without replacement.
async fn page(
    State(app): State<AppState>,
    Path(id): Path<String>,
    params: Result<Query<PageParams>, QueryRejection>,
) -> Result<Json<PageView>, ApiError> {
    let Query(params) = params?;
    let session = app.session(&id)?;
    let mut s = session.lock().await;
    if s.open.is_none() {
        let n = s.data.db.len();
        let size = params.size.unwrap_or(app.config().page_size).min(n);
        if size == 0 {
            return Err(ApiError::Unprocessable("page size must be positive".into()));
        }
        let presented = index::sample(&mut s.page_rng, n, size).into_iter().map(BehaviorId).collect();
        let page_id = format!("{}-p{}", s.id, s.pages.len() + 1);
        s.open = Some(OpenPage {
            page_id,
            presented,
            order: vec![],
        });
    }
    let open = s.open.as_ref().expect("just opened");
    Ok(Json(page_view(&s, open)))
}

async fn explore(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<Explore>, JsonRejection>,
) -> Result<Json<Explored>, ApiError> {
    let Json(req) = body?;
    let session = app.session(&id)?;
    let mut s = session.lock().await;
    if !s.data.db.contains(req.behavior_id) {
        return Err(ApiError::NotFound(format!("unknown behavior {}", req.behavior_id)));
    }
    let open = s.open.as_mut().ok_or_else(|| ApiError::Conflict("no open page".into()))?;
    if !open.presented.contains(&req.behavior_id) {
        return Err(ApiError::Unprocessable(format!("behavior {} is not on page {}", req.behavior_id, open.page_id)));
    }
    if !open.order.contains(&req.behavior_id) {
        open.order.push(req.behavior_id);
    }
    Ok(Json(Explored {
        page_id: open.page_id.clone(),
        explore_order: open.order.clone(),
    }))
}

async fn close_page(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<PageClosed>, ApiError> {
    let session = app.session(&id)?;
    let mut s = session.lock().await;
    let open = s.open.take().ok_or_else(|| ApiError::Conflict("no open page".into()))?;
    let position = s.pages.len() + 1;
    let page = ExplorationPage::from_actions(open.page_id, s.id.clone(), position, open.presented, open.order)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let closed = PageClosed {
        page_id: page.page_id.clone(),
        position,
        explored: page.explored.clone(),
        ignored: page.ignored.clone(),
        contrastive: page.is_contrastive(),
    };
    s.pages.push(page);
    Ok(Json(closed))
}

struct Job {
    objective: Objective,
    dim: usize,
    hyper: Hyper,
    hidden: Vec<usize>,
    pages: Vec<ExplorationPage>,
    data: Arc<Dataset>,
    seed: u64,
}

type JobOutput = (FeatureTable, clea::features::LossReport);

fn run_job(job: &Job) -> Result<JobOutput, String> {
    let data = TrainData {
        payloads: &job.data.payloads,
        pages: &job.pages,
        auxiliary: job.data.auxiliary.as_ref(),
    };
    let (space, report) =
        train_feature_space(job.objective, &job.hidden, job.dim, data, &job.hyper, job.seed).map_err(|e| e.to_string())?;
    let table = space.embed(&job.data.payloads).map_err(|e| e.to_string())?.standardized();
    Ok((table, report))
}

/// Rank-query seeds: the session's explored items, the dataset's exemplars,
/// then evenly spaced ids until there are enough distinct neighbors.
fn query_generator(s: &Session, table: &FeatureTable, size: usize) -> Result<QueryGenerator, String> {
    let mut seeds: Vec<BehaviorId> = Vec::new();
    let mut seen = BTreeSet::new();
    let explored = s.pages.iter().flat_map(|p| p.explored.iter().copied());
    for id in explored.chain(s.data.exemplars.iter().copied()) {
        if seen.insert(id) {
            seeds.push(id);
        }
    }
    let n = s.data.db.len();
    let mut stride = n.max(1);
    loop {
        let generator = QueryGenerator::new(&seeds, &[("session", table)]).map_err(|e| e.to_string());
        match generator {
            Ok(g) if g.distinct_candidates() >= size => return Ok(g),
            _ if seeds.len() * 2 >= n || stride == 1 => return generator,
            _ => {}
        }
        stride = (stride / 2).max(1);
        for i in (0..n).step_by(stride) {
            if seen.insert(BehaviorId(i)) {
                seeds.push(BehaviorId(i));
            }
        }
    }
}

fn install(s: &mut Session, job: &Job, result: Result<JobOutput, String>, query_size: usize, mh: &MhConfig, seed: u64) {
    let installed = result.and_then(|(table, report)| {
        let generator = query_generator(s, &table, query_size)?;
        let posterior = LinearRewardPosterior::new(job.dim, mh.clone(), derive_seed(seed, "service-posterior", s.number));
        s.model = Some(Model {
            table,
            generator,
            posterior,
            query: None,
        });
        Ok(report)
    });
    s.status = match installed {
        Ok(report) => TrainStatus {
            state: TrainState::Done,
            loss: Some(LossSummary::of(&report)),
            ..s.status.clone()
        },
        Err(e) => TrainStatus {
            state: TrainState::Failed,
            error: Some(e),
            ..s.status.clone()
        },
    };
}

async fn train(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<Train>, JsonRejection>,
) -> Result<(StatusCode, Json<TrainStatus>), ApiError> {
    let Json(req) = body?;
    let objective: Objective = req.objective.parse().map_err(ApiError::Unprocessable)?;
    if req.dim == 0 {
        return Err(ApiError::Unprocessable("dim must be positive".into()));
    }
    let session = app.session(&id)?;
    let mut s = session.lock().await;
    if s.status.state == TrainState::Running {
        return Err(ApiError::Conflict("training already running".into()));
    }
    if objective.uses_triplets() && !s.pages.iter().any(ExplorationPage::is_contrastive) {
        return Err(ApiError::Conflict("train needs at least one closed page with explored and ignored items".into()));
    }
    if objective == Objective::Pretrained && s.data.auxiliary.is_none() {
        return Err(ApiError::Unprocessable(format!("database `{}` has no auxiliary payloads", s.data.name)));
    }
    let config = app.config();
    let mut hyper = Hyper::for_modality(s.data.db.modality);
    hyper.alpha = req.alpha.unwrap_or(hyper.alpha);
    hyper.beta = req.beta.unwrap_or(hyper.beta);
    hyper.epochs = config.epochs.unwrap_or(hyper.epochs);
    let mut pages = s.pages.clone();
    if req.pool_population {
        pages.extend(s.data.population.iter().cloned());
    }
    s.status = TrainStatus {
        state: TrainState::Running,
        objective: Some(objective.to_string()),
        dim: Some(req.dim),
        pages: Some(pages.len()),
        loss: None,
        error: None,
    };
    let running = s.status.clone();
    let job = Job {
        objective,
        dim: req.dim,
        hyper,
        hidden: config.encoder_hidden.clone(),
        pages,
        data: s.data.clone(),
        seed: derive_seed(config.seed, "service-train", s.number),
    };
    drop(s);

    let handle = {
        let session = session.clone();
        let (query_size, mh, seed) = (config.query_size, config.mh.clone(), config.seed);
        tokio::spawn(async move {
            let (job, result) = tokio::task::spawn_blocking(move || {
                let result = run_job(&job);
                (job, result)
            })
            .await
            .expect("training task panicked");
            let mut s = session.lock().await;
            install(&mut s, &job, result, query_size, &mh, seed);
            s.status.clone()
        })
    };
    if req.wait {
        let status = handle.await.map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok((StatusCode::OK, Json(status)))
    } else {
        Ok((StatusCode::ACCEPTED, Json(running)))
    }
}

async fn train_status(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<TrainStatus>, ApiError> {
    let session = app.session(&id)?;
    let s = session.lock().await;
    Ok(Json(s.status.clone()))
}

fn model_mut(s: &mut Session) -> Result<&mut Model, ApiError> {
    s.model.as_mut().ok_or_else(|| ApiError::Conflict("no trained feature space; POST train first".into()))
}

async fn rank_query(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<RankQuery>, ApiError> {
    let session = app.session(&id)?;
    let mut guard = session.lock().await;
    let s = &mut *guard;
    let size = app.config().query_size;
    let model = s.model.as_mut().ok_or_else(|| ApiError::Conflict("no trained feature space; POST train first".into()))?;
    let query = model.generator.query(size, &[], &mut s.query_rng).map_err(|e| ApiError::Internal(e.to_string()))?;
    model.query = Some(query.clone());
    let behaviors = query.iter().map(|&id| Item { id, summary: summary(&s.data, id) }).collect();
    Ok(Json(RankQuery { behaviors }))
}

async fn rank(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<Rank>, JsonRejection>,
) -> Result<Json<Ranked>, ApiError> {
    let Json(req) = body?;
    let session = app.session(&id)?;
    let mut guard = session.lock().await;
    let data = guard.data.clone();
    let model = model_mut(&mut guard)?;
    let query = match req.query {
        Some(q) => {
            if let Some(&bad) = q.iter().find(|&&b| !data.db.contains(b)) {
                return Err(ApiError::NotFound(format!("unknown behavior {bad}")));
            }
            q
        }
        None => model.query.clone().ok_or_else(|| ApiError::Conflict("no rank query issued".into()))?,
    };
    let record = RankingRecord::new(query, req.sigma, false).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let comparisons = decompose_ranking(&record).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    model
        .posterior
        .observe_all(&comparisons, &model.table)
        .map_err(|e| ApiError::Internal(e.to_string()))?;

    let mean = model.posterior.mean();
    let mut scored: Vec<(BehaviorId, f64)> = (0..model.table.len())
        .map(|i| {
            let id = BehaviorId(i);
            (id, model.table.row(id).iter().zip(&mean).map(|(x, w)| x * w).sum())
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let recommendations = scored
        .into_iter()
        .take(app.config().top_k)
        .map(|(id, reward)| Recommendation {
            id,
            reward,
            summary: summary(&data, id),
        })
        .collect();
    Ok(Json(Ranked {
        posterior: PosteriorView {
            spread: model.posterior.spread(),
            comparisons: model.posterior.comparisons().len(),
            mean,
        },
        recommendations,
    }))
}

async fn export(State(app): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let session = app.session(&id)?;
    let s = session.lock().await;
    let mut out = Vec::new();
    write_session_log(&s.pages, &mut out).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], out))
}
