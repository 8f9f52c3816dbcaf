//! HTTP service over a frozen checkpoint.
//!
//! The model and base graph are read-only for the life of the process. Submitted
//! scenarios live in memory, keyed by content hash; each one is evaluated at most
//! once and its pair diff is reused for every filter radius.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use flowplan_core::geodata::Indicator;
use flowplan_core::model::{ModelError, TrainedModel};
use flowplan_core::scenario::{
    apply_scenario, outcome, predict_scenario, FlowDiff, Scenario, ScenarioError, ScenarioOptions, ScenarioOutcome,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::OnceCell;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineFlow {
    pub origin: String,
    pub destination: String,
    pub flow: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineListing {
    pub n_pairs: usize,
    pub flows: Vec<BaselineFlow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TractRow {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    /// Raw indicator values, aligned with the listing's `indicators`.
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TractListing {
    pub indicators: Vec<Indicator>,
    pub tracts: Vec<TractRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submitted {
    pub id: String,
    pub name: String,
    /// False when identical content was already stored.
    pub created: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub n_edits: usize,
    pub evaluated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
    pub n_tracts: usize,
    pub n_scenarios: usize,
    pub n_evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.to_string(),
                message: message.into(),
            },
        }
    }

    fn no_model() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "no_model", "no checkpoint loaded")
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Model(m) => ApiError::internal(m.to_string()),
            other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_scenario", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

struct Loaded {
    model: TrainedModel,
    baseline: BaselineListing,
}

#[derive(Default)]
struct ScenarioStore {
    by_id: BTreeMap<String, Scenario>,
    id_of_name: BTreeMap<String, String>,
}

/// Shared process state.
pub struct AppState {
    loaded: Option<Arc<Loaded>>,
    options: ScenarioOptions,
    store: RwLock<ScenarioStore>,
    diffs: Mutex<HashMap<String, Arc<OnceCell<Arc<FlowDiff>>>>>,
    evaluations: AtomicUsize,
}

impl AppState {
    /// Loads a model and precomputes baseline predictions on its observed pairs.
    pub fn new(model: TrainedModel, options: ScenarioOptions) -> Result<Self, ModelError> {
        let baseline = {
            let predictor = model.predictor()?;
            let graph = &model.graph;
            let emb = predictor.embed(graph)?;
            let values = predictor.predict_pairs(graph, &emb, &model.observed_pairs)?;
            let mut flows: Vec<BaselineFlow> = model
                .observed_pairs
                .iter()
                .zip(values)
                .map(|(&(i, j), flow)| BaselineFlow {
                    origin: graph.tracts[i].id.clone(),
                    destination: graph.tracts[j].id.clone(),
                    flow,
                })
                .collect();
            flows.sort_by(|a, b| (&a.origin, &a.destination).cmp(&(&b.origin, &b.destination)));
            BaselineListing {
                n_pairs: flows.len(),
                flows,
            }
        };
        Ok(Self::with(Some(Arc::new(Loaded { model, baseline })), options))
    }

    /// State without a checkpoint; data endpoints answer 503.
    pub fn empty(options: ScenarioOptions) -> Self {
        Self::with(None, options)
    }

    fn with(loaded: Option<Arc<Loaded>>, options: ScenarioOptions) -> Self {
        Self {
            loaded,
            options,
            store: RwLock::default(),
            diffs: Mutex::default(),
            evaluations: AtomicUsize::new(0),
        }
    }

    /// Number of scenario evaluations actually run (cache misses).
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::SeqCst)
    }

    fn loaded(&self) -> Result<&Arc<Loaded>, ApiError> {
        self.loaded.as_ref().ok_or_else(ApiError::no_model)
    }

    async fn diff(&self, id: &str, scenario: Scenario) -> Result<Arc<FlowDiff>, ApiError> {
        let loaded = self.loaded()?.clone();
        let cell = self.diffs.lock().expect("diff cache lock").entry(id.to_string()).or_default().clone();
        let options = self.options;
        cell.get_or_try_init(|| async move {
            self.evaluations.fetch_add(1, Ordering::SeqCst);
            tokio::task::spawn_blocking(move || {
                let predictor = loaded.model.predictor().map_err(ScenarioError::Model)?;
                predict_scenario(&predictor, &scenario, &options).map(Arc::new)
            })
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(ApiError::from)
        })
        .await
        .cloned()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/tracts", get(tracts))
        .route("/flows/baseline", get(baseline))
        .route("/scenarios", get(list_scenarios).post(submit_scenario))
        .route("/scenarios/{id}/diff", get(scenario_diff))
        .with_state(state)
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let n_tracts = state.loaded.as_ref().map_or(0, |l| l.model.graph.len());
    Json(Health {
        status: "ok".into(),
        model_loaded: state.loaded.is_some(),
        n_tracts,
        n_scenarios: state.store.read().expect("store lock").by_id.len(),
        n_evaluations: state.evaluations(),
    })
}

async fn tracts(State(state): State<Arc<AppState>>) -> Result<Json<TractListing>, ApiError> {
    let model = &state.loaded()?.model;
    let mut rows: Vec<TractRow> = model
        .graph
        .tracts
        .iter()
        .map(|t| TractRow {
            id: t.id.clone(),
            lat: t.centroid.lat,
            lon: t.centroid.lon,
            values: t.features.clone(),
            geometry: t.geometry.clone(),
        })
        .collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Json(TractListing {
        indicators: model.schema.indicators.clone(),
        tracts: rows,
    }))
}

async fn baseline(State(state): State<Arc<AppState>>) -> Result<Json<BaselineListing>, ApiError> {
    Ok(Json(state.loaded()?.baseline.clone()))
}

async fn list_scenarios(State(state): State<Arc<AppState>>) -> Json<Vec<ScenarioEntry>> {
    let store = state.store.read().expect("store lock");
    let diffs = state.diffs.lock().expect("diff cache lock");
    let entries = store
        .id_of_name
        .values()
        .map(|id| {
            let s = &store.by_id[id];
            ScenarioEntry {
                id: id.clone(),
                name: s.name.clone(),
                note: s.note.clone(),
                n_edits: s.edits.len(),
                evaluated: diffs.get(id).is_some_and(|c| c.initialized()),
            }
        })
        .collect();
    Json(entries)
}

async fn submit_scenario(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let model = &state.loaded()?.model;
    let text = std::str::from_utf8(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_scenario", e.to_string()))?;
    let scenario = Scenario::from_json(text, "request body")?;
    apply_scenario(&model.graph, &model.schema, &scenario)?;
    let id = scenario.content_hash();

    let mut store = state.store.write().expect("store lock");
    if let Some(existing) = store.id_of_name.get(&scenario.name) {
        if *existing != id {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "duplicate_name",
                format!("a different scenario named {:?} exists", scenario.name),
            ));
        }
        let body = Submitted {
            id,
            name: scenario.name,
            created: false,
        };
        return Ok((StatusCode::OK, Json(body)).into_response());
    }
    store.id_of_name.insert(scenario.name.clone(), id.clone());
    let name = scenario.name.clone();
    store.by_id.insert(id.clone(), scenario);
    Ok((StatusCode::CREATED, Json(Submitted { id, name, created: true })).into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct DiffQuery {
    pub radius_km: Option<f64>,
    pub bins: Option<usize>,
}

async fn scenario_diff(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<DiffQuery>,
) -> Result<Json<ScenarioOutcome>, ApiError> {
    let loaded = state.loaded()?.clone();
    let scenario = state
        .store
        .read()
        .expect("store lock")
        .by_id
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_scenario", format!("no scenario {id}")))?;
    let diff = state.diff(&id, scenario.clone()).await?;
    let bins = query.bins.unwrap_or(state.options.bins);
    Ok(Json(outcome(&loaded.model.graph, &scenario, &diff, query.radius_km, bins)?))
}
