//! HTTP front end for provisioning runs. Each run executes on a blocking
//! worker and publishes a copy of its state after every transition;
//! handlers read those copies or forward the operator's decision.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use olstwin::plant::{file::parse_plant, OpticalLinePlant};
use olstwin::provisioner::run::DEFAULT_REVIEW_MIN;
use olstwin::provisioner::{
    run_provisioning, Decision, DecisionKind, DecisionSource, ProvisioningRun, RunConfig, RunOutputs, RunState,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Listen address variable and its default.
pub const ADDR_VAR: &str = "OLS_TWIN_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
/// Artifact root variable; runs write no files when it is unset.
pub const DATA_VAR: &str = "OLS_TWIN_DATA";

pub fn listen_addr() -> String {
    std::env::var(ADDR_VAR).unwrap_or_else(|_| DEFAULT_ADDR.into())
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: Option<PathBuf>,
    /// Wall-clock time a run waits in AwaitDecision before timing out.
    pub decision_wait: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { data_dir: None, decision_wait: Duration::from_secs(600) }
    }
}

impl ServiceConfig {
    pub fn from_env() -> Self {
        Self { data_dir: std::env::var_os(DATA_VAR).map(PathBuf::from), ..Self::default() }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// What the service knows about one run.
struct RunView {
    run: ProvisioningRun,
    outputs: RunOutputs,
    /// Open while the run can still accept a decision.
    decision_tx: Option<mpsc::Sender<(DecisionKind, String)>>,
    /// Decision accepted through the API.
    requested: Option<DecisionKind>,
}

struct RunSlot {
    plant_id: String,
    view: Mutex<RunView>,
}

/// Publishes every transition and waits on the API for the decision.
struct ServiceDecision {
    slot: Arc<RunSlot>,
    rx: mpsc::Receiver<(DecisionKind, String)>,
    wait: Duration,
}

impl DecisionSource for ServiceDecision {
    fn observe(&mut self, run: &ProvisioningRun, outputs: &RunOutputs) {
        let mut v = lock(&self.slot.view);
        v.run = run.clone();
        v.outputs = outputs.clone();
    }

    fn decide(&mut self, _: &ProvisioningRun, _: &RunOutputs, _: f64) -> Option<Decision> {
        let got = self.rx.recv_timeout(self.wait).ok();
        // Close the gate under the lock so a decision is either received
        // here or refused by the handler.
        let mut v = lock(&self.slot.view);
        v.decision_tx = None;
        let (kind, decided_by) = got.or_else(|| self.rx.try_recv().ok())?;
        Some(Decision { kind, decided_by, after_min: DEFAULT_REVIEW_MIN })
    }
}

/// Run status as served by `GET /runs/{id}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub plant_id: String,
    pub state: RunState,
    pub elapsed_min: f64,
    pub pending_decision: bool,
    pub decision: Option<olstwin::provisioner::run::DecisionRecord>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub links: BTreeMap<String, String>,
    /// Directory holding the run's files once it has finished.
    pub artifacts_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Shared {
    cfg: ServiceConfig,
    plants: Mutex<BTreeMap<String, Arc<OpticalLinePlant>>>,
    runs: Mutex<BTreeMap<String, Arc<RunSlot>>>,
    next_plant: AtomicU64,
    next_run: AtomicU64,
}

/// Plants and runs held by one service instance.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Self {
        Self(Arc::new(Shared {
            cfg,
            plants: Mutex::default(),
            runs: Mutex::default(),
            next_plant: AtomicU64::new(1),
            next_run: AtomicU64::new(1),
        }))
    }

    pub fn add_plant(&self, plant: OpticalLinePlant) -> String {
        let id = format!("plant-{}", self.0.next_plant.fetch_add(1, Ordering::Relaxed));
        lock(&self.0.plants).insert(id.clone(), Arc::new(plant));
        id
    }

    /// Starts a run on a blocking worker; must be called inside a Tokio
    /// runtime.
    pub fn start_run(&self, plant_id: &str, mut cfg: RunConfig) -> ApiResult<String> {
        let plant = lock(&self.0.plants)
            .get(plant_id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown plant {plant_id}")))?;
        let run_id = format!("run-{}", self.0.next_run.fetch_add(1, Ordering::Relaxed));
        cfg.run_id = run_id.clone();
        cfg.artifacts_dir = self.0.cfg.data_dir.clone();
        let (tx, rx) = mpsc::channel();
        let slot = Arc::new(RunSlot {
            plant_id: plant_id.into(),
            view: Mutex::new(RunView {
                run: ProvisioningRun {
                    run_id: run_id.clone(),
                    plant: plant.name.clone(),
                    state: RunState::Idle,
                    timeline: Vec::new(),
                    decision: None,
                    elapsed_min: 0.0,
                    error: None,
                    warnings: Vec::new(),
                },
                outputs: RunOutputs::default(),
                decision_tx: Some(tx),
                requested: None,
            }),
        });
        lock(&self.0.runs).insert(run_id.clone(), slot.clone());
        let wait = self.0.cfg.decision_wait;
        tokio::task::spawn_blocking(move || {
            let mut source = ServiceDecision { slot: slot.clone(), rx, wait };
            let result = run_provisioning(&plant, &cfg, &mut source);
            let mut v = lock(&slot.view);
            v.decision_tx = None;
            match result {
                Ok(o) => {
                    v.run = o.run;
                    v.outputs = o.outputs;
                }
                Err(e) => {
                    log::error!("run {}: {e}", cfg.run_id);
                    v.run.state = RunState::Failed;
                    v.run.error = Some(e.to_string());
                }
            }
        });
        Ok(run_id)
    }

    fn slot(&self, run_id: &str) -> ApiResult<Arc<RunSlot>> {
        lock(&self.0.runs)
            .get(run_id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown run {run_id}")))
    }

    pub fn summary(&self, run_id: &str) -> ApiResult<RunSummary> {
        let slot = self.slot(run_id)?;
        let v = lock(&slot.view);
        Ok(self.summarize(&slot, &v))
    }

    fn summarize(&self, slot: &RunSlot, v: &RunView) -> RunSummary {
        let id = &v.run.run_id;
        let links = ["profile", "qot", "timeline", "stability", "decision"]
            .into_iter()
            .map(|k| (k.to_string(), format!("/runs/{id}/{k}")))
            .collect();
        RunSummary {
            run_id: id.clone(),
            plant_id: slot.plant_id.clone(),
            state: v.run.state,
            elapsed_min: v.run.elapsed_min,
            pending_decision: v.run.state == RunState::AwaitDecision
                && v.requested.is_none()
                && v.decision_tx.is_some(),
            decision: v.run.decision.clone(),
            error: v.run.error.clone(),
            warnings: v.run.warnings.clone(),
            links,
            artifacts_dir: self.0.cfg.data_dir.as_ref().map(|d| d.join(id)),
        }
    }

    /// Forwards a decision. Repeating the accepted decision is a no-op;
    /// anything else outside AwaitDecision is a conflict.
    pub fn decide(&self, run_id: &str, kind: DecisionKind, decided_by: String) -> ApiResult<RunSummary> {
        let slot = self.slot(run_id)?;
        let mut v = lock(&slot.view);
        match v.requested {
            Some(k) if k == kind => return Ok(self.summarize(&slot, &v)),
            Some(k) => return Err(ApiError::new(StatusCode::CONFLICT, format!("run already decided: {k:?}"))),
            None => {}
        }
        if v.run.state != RunState::AwaitDecision {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("run is in {:?}", v.run.state)));
        }
        let sent = v.decision_tx.as_ref().is_some_and(|tx| tx.send((kind, decided_by)).is_ok());
        if !sent {
            return Err(ApiError::new(StatusCode::CONFLICT, "decision window closed"));
        }
        v.requested = Some(kind);
        Ok(self.summarize(&slot, &v))
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

async fn create_plant(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let plant = parse_plant(text).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let name = plant.name.clone();
    let id = s.add_plant(plant);
    Ok((StatusCode::CREATED, Json(json!({ "plant_id": id, "name": name }))))
}

async fn list_plants(State(s): State<AppState>) -> Json<Value> {
    let plants = lock(&s.0.plants);
    Json(plants.iter().map(|(id, p)| json!({ "plant_id": id, "name": p.name })).collect())
}

#[derive(Deserialize)]
struct CreateRun {
    plant_id: String,
    #[serde(default)]
    config: RunConfig,
}

async fn create_run(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateRun = parse_json(&body)?;
    let id = s.start_run(&req.plant_id, req.config)?;
    Ok((StatusCode::CREATED, Json(json!({ "run_id": id }))))
}

async fn list_runs(State(s): State<AppState>) -> Json<Vec<RunSummary>> {
    let slots: Vec<_> = lock(&s.0.runs).values().cloned().collect();
    Json(slots.iter().map(|slot| s.summarize(slot, &lock(&slot.view))).collect())
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<RunSummary>> {
    s.summary(&id).map(Json)
}

/// Runs `f` on the run's published state.
fn with_view<T>(s: &AppState, id: &str, f: impl FnOnce(&RunView) -> T) -> ApiResult<T> {
    let slot = s.slot(id)?;
    let v = lock(&slot.view);
    Ok(f(&v))
}

async fn get_profile(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_view(&s, &id, |v| {
        Json(json!({
            "profile": v.outputs.dlm_profile,
            "extract": v.outputs.dataset1,
            "params": v.outputs.params,
        }))
    })
}

async fn get_qot(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_view(&s, &id, |v| {
        let sweep = v.outputs.sweep.as_ref();
        Json(json!({
            "transparency": v.outputs.transparency,
            "sweep": sweep,
            "calibrated_stats": sweep.map(|r| r.stats(true)),
            "baseline_stats": sweep.map(|r| r.stats(false)),
        }))
    })
}

async fn get_timeline(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_view(&s, &id, |v| {
        Json(json!({
            "state": v.run.state,
            "elapsed_min": v.run.elapsed_min,
            "timeline": v.run.timeline,
            "critical_path": v.run.critical_path(),
        }))
    })
}

async fn get_stability(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_view(&s, &id, |v| Json(json!({ "stability": v.outputs.stability })))
}

#[derive(Deserialize)]
struct DecisionBody {
    decision: DecisionKind,
    #[serde(default = "operator")]
    decided_by: String,
}

fn operator() -> String {
    "operator".into()
}

async fn post_decision(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<RunSummary>> {
    // Unknown runs are reported before malformed bodies.
    s.slot(&id)?;
    let req: DecisionBody = parse_json(&body)?;
    s.decide(&id, req.decision, req.decided_by).map(Json)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/plants", post(create_plant).get(list_plants))
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/profile", get(get_profile))
        .route("/runs/{id}/qot", get(get_qot))
        .route("/runs/{id}/timeline", get(get_timeline))
        .route("/runs/{id}/stability", get(get_stability))
        .route("/runs/{id}/decision", post(post_decision))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// The guide's service chapter, compiled as doc-tests.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/service.md")]
mod book {}
