//! HTTP facade over the planning and auction engines.
//!
//! Runs are submitted through `POST /api/plans` and `POST /api/auctions`,
//! queued on a bounded channel (429 when full) and executed by a fixed pool
//! of workers on blocking threads. Every state transition of a run is
//! written as one JSON document per run id under `<data dir>/runs`, so a
//! restarted service serves finished results without re-executing them.

pub mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use squadmarket_core::auction::AuctionSetup;
use squadmarket_core::mc_sim::{simulate_reporting, AuctionStats, SimParams};
use squadmarket_core::model_io::{
    load_coefficients, load_league_registry, load_player_table, read_player_table, LeagueRegistry, ModelCoefficients, ModelIoError, PlayerRecord,
    ScenarioConfig,
};
use squadmarket_core::solvers::{build_problem, plan_transfers, TransferPlan};
use tokio::sync::{mpsc, Mutex};

pub use store::{RunKind, RunStatus, RunStore, ScenarioRun};

/// Environment variable naming the data directory.
pub const DATA_DIR_ENV: &str = "SQUADMARKET_DATA_DIR";

/// Name under which the bundled synthetic league is served.
pub const BUNDLED_DATASET: &str = "league";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Holds `runs/` and uploaded `datasets/`.
    pub data_dir: PathBuf,
    /// Bundled fixtures: `league/players.csv`, `league/clubs.json`,
    /// `coefficients.json` and `auction/*.json`.
    pub fixtures_dir: PathBuf,
    pub workers: usize,
    pub queue_capacity: usize,
}

impl ServiceConfig {
    /// Data directory from [`DATA_DIR_ENV`] (default `./data`), the
    /// repository fixtures, two workers and a queue of 16 runs.
    pub fn from_env() -> Self {
        Self {
            data_dir: std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data")),
            fixtures_dir: default_fixtures_dir(),
            workers: 2,
            queue_capacity: 16,
        }
    }
}

/// The repository's `fixtures/` directory.
pub fn default_fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

// ---------------------------------------------------------------------------
// Requests and engine entry points
// ---------------------------------------------------------------------------

/// Body of `POST /api/plans`. Club metadata and coefficients default to the
/// bundled fixtures.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    pub dataset: String,
    pub config: ScenarioConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clubs: Option<LeagueRegistry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<ModelCoefficients>,
}

/// Body of `POST /api/auctions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuctionRequest {
    pub setup: AuctionSetup,
    pub n_sim: usize,
    #[serde(alias = "T")]
    pub rounds: usize,
    pub seed: u64,
}

/// Prices the player table for the focal club and solves the scenario.
pub fn run_plan(
    players: &[PlayerRecord],
    registry: &LeagueRegistry,
    coefficients: &ModelCoefficients,
    config: &ScenarioConfig,
    progress: Option<&(dyn Fn(f64) + Sync)>,
) -> anyhow::Result<TransferPlan> {
    let problem = build_problem(players, registry, coefficients, config)?;
    Ok(plan_transfers(&problem, &config.directives, &config.weights(), &config.solver, progress)?)
}

pub fn run_auction(req: &AuctionRequest, progress: Option<&(dyn Fn(f64) + Sync)>) -> anyhow::Result<AuctionStats> {
    let params = SimParams { rounds: req.rounds, n_sim: req.n_sim, seed: req.seed, keep_paths: false };
    Ok(simulate_reporting(&req.setup, &params, progress)?)
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into() }
    }

    fn bad_request(kind: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, kind, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.kind, "message": self.message }))).into_response()
    }
}

fn scenario_error(e: &ModelIoError) -> ApiError {
    let kind = match e {
        ModelIoError::BadWeight(_) => "BadWeight",
        ModelIoError::ConflictingDirectives(_) => "ConflictingDirectives",
        _ => "BadScenario",
    };
    ApiError::bad_request(kind, e.to_string())
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("SchemaViolation", e.to_string()))
}

// ---------------------------------------------------------------------------
// State and workers
// ---------------------------------------------------------------------------

enum Work {
    Plan(Box<PlanRequest>),
    Auction(Box<AuctionRequest>),
}

struct Job {
    run_id: String,
    work: Work,
}

struct Inner {
    config: ServiceConfig,
    store: RunStore,
    queue: mpsc::Sender<Job>,
}

/// Shared handle to the run store and the job queue.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Opens the store (failing any run interrupted by a previous shutdown)
    /// and starts the workers. Must be called inside a Tokio runtime.
    pub fn start(config: ServiceConfig) -> anyhow::Result<Self> {
        std::fs::create_dir_all(config.data_dir.join("datasets"))?;
        let store = RunStore::open(config.data_dir.join("runs"))?;
        let (tx, rx) = mpsc::channel(config.queue_capacity.max(1));
        let state = AppState { inner: Arc::new(Inner { store, queue: tx, config }) };
        let rx = Arc::new(Mutex::new(rx));
        for _ in 0..state.inner.config.workers.max(1) {
            tokio::spawn(worker(state.clone(), rx.clone()));
        }
        Ok(state)
    }

    pub fn store(&self) -> &RunStore {
        &self.inner.store
    }

    fn dataset_path(&self, name: &str) -> Option<PathBuf> {
        let path = if name == BUNDLED_DATASET {
            self.inner.config.fixtures_dir.join("league/players.csv")
        } else {
            valid_dataset_name(name).then(|| self.inner.config.data_dir.join("datasets").join(format!("{name}.csv")))?
        };
        path.is_file().then_some(path)
    }

    fn submit(&self, kind: RunKind, snapshot: Value, work: Work) -> Result<ScenarioRun, ApiError> {
        let permit = self
            .inner
            .queue
            .try_reserve()
            .map_err(|_| ApiError::new(StatusCode::TOO_MANY_REQUESTS, "QueueFull", "the run queue is full; retry later"))?;
        let run = self.inner.store.create(kind, snapshot).map_err(ApiError::internal)?;
        permit.send(Job { run_id: run.run_id.clone(), work });
        Ok(run)
    }

    fn execute(&self, run_id: &str, work: &Work) -> anyhow::Result<Value> {
        let store = &self.inner.store;
        let progress = |f: f64| store.set_progress(run_id, f);
        match work {
            Work::Plan(req) => {
                let fixtures = &self.inner.config.fixtures_dir;
                let path = self.dataset_path(&req.dataset).ok_or_else(|| anyhow::anyhow!("dataset `{}` disappeared", req.dataset))?;
                let players = load_player_table(path)?;
                let clubs = match &req.clubs {
                    Some(c) => c.clone(),
                    None => load_league_registry(fixtures.join("league/clubs.json"))?,
                };
                let coefficients = match &req.coefficients {
                    Some(c) => c.clone(),
                    None => load_coefficients(fixtures.join("coefficients.json"))?,
                };
                let plan = run_plan(&players, &clubs, &coefficients, &req.config, Some(&progress))?;
                Ok(serde_json::to_value(plan)?)
            }
            Work::Auction(req) => Ok(serde_json::to_value(run_auction(req, Some(&progress))?)?),
        }
    }
}

async fn worker(state: AppState, rx: Arc<Mutex<mpsc::Receiver<Job>>>) {
    loop {
        let Some(job) = rx.lock().await.recv().await else { return };
        let store = &state.inner.store;
        if let Err(e) = store.mark_running(&job.run_id) {
            eprintln!("run {}: could not record start: {e}", job.run_id);
            continue;
        }
        let st = state.clone();
        let id = job.run_id.clone();
        let outcome = tokio::task::spawn_blocking(move || st.execute(&id, &job.work)).await;
        let recorded = match outcome {
            Ok(Ok(result)) => store.finish(&job.run_id, Ok(result)),
            Ok(Err(e)) => store.finish(&job.run_id, Err(format!("{e:#}"))),
            Err(e) => store.finish(&job.run_id, Err(format!("worker panicked: {e}"))),
        };
        if let Err(e) = recorded {
            eprintln!("run {}: could not record result: {e}", job.run_id);
        }
    }
}

// ---------------------------------------------------------------------------
// Handlers
// ---------------------------------------------------------------------------

fn valid_dataset_name(name: &str) -> bool {
    !name.is_empty() && name.len() <= 64 && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn accepted(run: &ScenarioRun) -> Response {
    (StatusCode::ACCEPTED, Json(json!({ "run_id": run.run_id, "status": run.status }))).into_response()
}

async fn create_plan(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: PlanRequest = parse_body(&body)?;
    req.config.validate().map_err(|e| scenario_error(&e))?;
    if let Some(c) = &req.coefficients {
        c.validate().map_err(|e| ApiError::bad_request("BadCoefficients", e.to_string()))?;
    }
    if let Some(c) = &req.clubs {
        c.validate().map_err(|e| ApiError::bad_request("BadClub", e.to_string()))?;
    }
    if state.dataset_path(&req.dataset).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownDataset", format!("no dataset named `{}`", req.dataset)));
    }
    let snapshot = serde_json::to_value(&req).map_err(ApiError::internal)?;
    let run = state.submit(RunKind::Plan, snapshot, Work::Plan(Box::new(req)))?;
    Ok(accepted(&run))
}

async fn create_auction(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: AuctionRequest = parse_body(&body)?;
    if req.rounds == 0 {
        return Err(ApiError::bad_request("BadParams", "rounds must be at least 1"));
    }
    if req.n_sim == 0 {
        return Err(ApiError::bad_request("BadParams", "n_sim must be at least 1"));
    }
    req.setup.validate().map_err(|e| ApiError::bad_request("BadSetup", e.to_string()))?;
    let snapshot = serde_json::to_value(&req).map_err(ApiError::internal)?;
    let run = state.submit(RunKind::Auction, snapshot, Work::Auction(Box::new(req)))?;
    Ok(accepted(&run))
}

async fn get_run(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ScenarioRun>, ApiError> {
    state
        .inner
        .store
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownRun", format!("no run with id `{id}`")))
}

async fn list_runs(State(state): State<AppState>) -> Json<Value> {
    let runs: Vec<Value> = state
        .inner
        .store
        .list()
        .into_iter()
        .map(|r| json!({ "run_id": r.run_id, "kind": r.kind, "status": r.status, "created_at_ms": r.created_at_ms }))
        .collect();
    Json(json!({ "runs": runs }))
}

#[derive(Debug, Serialize)]
struct DatasetInfo {
    name: String,
    players: usize,
    bundled: bool,
}

fn dataset_info(name: &str, path: &Path, bundled: bool) -> Option<DatasetInfo> {
    let players = load_player_table(path).ok()?.len();
    Some(DatasetInfo { name: name.to_string(), players, bundled })
}

async fn list_datasets(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let mut out = Vec::new();
    if let Some(p) = state.dataset_path(BUNDLED_DATASET) {
        out.extend(dataset_info(BUNDLED_DATASET, &p, true));
    }
    let dir = state.inner.config.data_dir.join("datasets");
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .map_err(ApiError::internal)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".csv").map(str::to_string))
        .filter(|n| valid_dataset_name(n) && n != BUNDLED_DATASET)
        .collect();
    names.sort();
    for n in names {
        out.extend(dataset_info(&n, &dir.join(format!("{n}.csv")), false));
    }
    Ok(Json(json!({ "datasets": out })))
}

#[derive(Debug, Deserialize)]
struct UploadQuery {
    name: String,
}

async fn upload_dataset(State(state): State<AppState>, Query(q): Query<UploadQuery>, body: Bytes) -> Result<Response, ApiError> {
    if !valid_dataset_name(&q.name) {
        return Err(ApiError::bad_request("BadDatasetName", "names use 1–64 letters, digits, `_` or `-`"));
    }
    if q.name == BUNDLED_DATASET {
        return Err(ApiError::new(StatusCode::CONFLICT, "ReservedName", format!("`{BUNDLED_DATASET}` is the bundled dataset")));
    }
    let players = read_player_table(&body[..]).map_err(|e| ApiError::bad_request("BadPlayerTable", e.to_string()))?;
    let path = state.inner.config.data_dir.join("datasets").join(format!("{}.csv", q.name));
    store::write_atomically(&path, &body).map_err(ApiError::internal)?;
    Ok((StatusCode::CREATED, Json(json!({ "name": q.name, "players": players.len(), "bundled": false }))).into_response())
}

async fn list_auction_setups(State(state): State<AppState>) -> Result<Json<BTreeMap<String, AuctionSetup>>, ApiError> {
    let dir = state.inner.config.fixtures_dir.join("auction");
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(&dir).map_err(ApiError::internal)?.filter_map(|e| e.ok()) {
        let path = entry.path();
        let Some(name) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(&path).map_err(ApiError::internal)?;
            out.insert(name.to_string(), serde_json::from_str(&text).map_err(ApiError::internal)?);
        }
    }
    Ok(Json(out))
}

/// The REST API.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/plans", post(create_plan))
        .route("/api/auctions", post(create_auction))
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/datasets", get(list_datasets).post(upload_dataset))
        .route("/api/auction-setups", get(list_auction_setups))
        .with_state(state)
}
