//! Request and response bodies and the route handlers.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mcle_core::engine::{EngineError, PendingQuery, QueryRecord, Session};
use mcle_core::sampler::{LikelihoodTracker, ZoneHistogram};
use mcle_core::{
    Label, OracleKind, PriorSchedule, ScheduleKind, SessionConfig, SessionStatus, StrategyConfig, StrategyKind, Zone,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::store::{SessionStore, StoreError};

pub type AppState = Arc<SessionStore>;

/// Error body: `{"error": {"code", "message", "field"?}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    fn field(mut self, field: impl Into<String>) -> ApiError {
        self.field = Some(field.into());
        self
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }

    /// Maps a body that failed to deserialize, naming the field when serde
    /// does.
    fn from_json(err: serde_json::Error) -> ApiError {
        let message = err.to_string();
        let field = message.split('`').nth(1).map(str::to_string);
        let e = ApiError::bad_request("invalid_body", message);
        match field {
            Some(f) => e.field(f),
            None => e,
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code,
                message: &self.message,
                field: self.field.as_deref(),
            },
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> ApiError {
        let message = e.to_string();
        match e {
            EngineError::Finished => ApiError::new(StatusCode::GONE, "finished", message),
            EngineError::SampleMismatch { .. } => {
                ApiError::new(StatusCode::CONFLICT, "sample_mismatch", message).field("sample_id")
            }
            EngineError::NoPendingQuery => ApiError::new(StatusCode::CONFLICT, "no_pending_query", message),
            EngineError::UnknownClass(_) | EngineError::NoGroundTruth(_) => {
                ApiError::bad_request("unknown_class", message).field("class")
            }
            EngineError::InvalidConfig(_) | EngineError::Sampler(_) | EngineError::Prior(_) => {
                ApiError::bad_request("invalid_config", message)
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "engine", message),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> ApiError {
        let message = e.to_string();
        match e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", message),
            StoreError::Capacity(_) => ApiError::new(StatusCode::CONFLICT, "capacity", message),
            StoreError::Engine(e) => e.into(),
            StoreError::Checkpoint { .. } => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "checkpoint", message),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking engine work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub class: String,
    pub strategy: String,
    pub prior: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_after: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

impl CreateRequest {
    fn into_config(self, store: &SessionStore) -> ApiResult<SessionConfig> {
        let data = store.dataset();
        if data.labels.class_index(&self.class).is_none() && data.relations.row_for(&self.class).is_none() {
            return Err(ApiError::bad_request("unknown_class", format!("unknown class {:?}", self.class)).field("class"));
        }
        let kind: StrategyKind = self
            .strategy
            .parse()
            .map_err(|e: mcle_core::sampler::SamplerError| ApiError::bad_request("unknown_strategy", e.to_string()).field("strategy"))?;
        let schedule_kind: ScheduleKind = self
            .prior
            .parse()
            .map_err(|e: mcle_core::prior::PriorError| ApiError::bad_request("unknown_prior", e.to_string()).field("prior"))?;
        let mut strategy = StrategyConfig::new(kind);
        if let Some(v) = self.rho_prime {
            strategy.rho_prime = v;
        }
        if let Some(v) = self.burn_in {
            strategy.burn_in = v;
        }
        let mut schedule = PriorSchedule::new(schedule_kind);
        if let Some(v) = self.drop_after {
            schedule.drop_after = v;
        }
        if let Some(v) = self.t0 {
            schedule.t0 = v;
        }
        let mut config = SessionConfig::new(self.class, strategy, schedule);
        config.oracle = OracleKind::External;
        if let Some(v) = self.budget {
            config.budget = v;
        }
        if let Some(v) = self.max_iters {
            config.max_iters = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.c {
            config.solver.c = v;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub t: u32,
    pub status: SessionStatus,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryResponse {
    pub sample_id: usize,
    /// The bundle's identifier for the sample.
    pub sample_key: String,
    pub display_uri: Option<String>,
    /// Fallback rendering coordinates when there is no display URI.
    pub projection: [f64; 2],
    pub score: f64,
    pub intended_zone: Zone,
    pub actual_zone: Zone,
    pub t: u32,
    pub rho: f64,
}

fn query_response(store: &SessionStore, q: &PendingQuery) -> QueryResponse {
    let pool = &store.dataset().pool;
    let uri = pool.display_uri(q.sample_id);
    QueryResponse {
        sample_id: q.sample_id,
        sample_key: pool.sample_id(q.sample_id).to_string(),
        display_uri: (!uri.is_empty()).then(|| uri.to_string()),
        projection: store.projection()[q.sample_id],
        score: q.score,
        intended_zone: q.intended_zone,
        actual_zone: q.actual_zone,
        t: q.t,
        rho: q.rho,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    sample_id: usize,
    label: Value,
}

fn parse_label(v: &Value) -> Option<Label> {
    match v {
        Value::Number(n) => n.as_i64().and_then(Label::from_i64),
        Value::String(s) => match s.as_str() {
            "+1" | "1" => Some(Label::Positive),
            "-1" => Some(Label::Negative),
            _ => None,
        },
        _ => None,
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelResponse {
    pub t: u32,
    pub rho: f64,
    pub tracker: LikelihoodTracker,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_ap: Option<f64>,
    pub iteration_complete: bool,
    pub status: SessionStatus,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: u32,
    pub test_ap: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProjectedSample {
    pub sample_id: usize,
    pub x: f64,
    pub y: f64,
    pub label: Option<Label>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateResponse {
    pub session_id: String,
    pub class: String,
    pub strategy: StrategyKind,
    pub prior: ScheduleKind,
    pub status: SessionStatus,
    pub t: u32,
    pub max_iters: u32,
    pub budget: usize,
    pub rho: f64,
    pub rho_prime: f64,
    pub n_pos: u32,
    pub n_neg: u32,
    pub tracker: LikelihoodTracker,
    pub tracker_per_zone: [f64; 4],
    pub zone_histogram: ZoneHistogram,
    pub curve: Vec<CurvePoint>,
    pub query_log: Vec<QueryRecord>,
    pub pending: Option<QueryResponse>,
    pub has_ground_truth: bool,
    /// Labelled samples and the pending query on the pool's two leading
    /// principal directions.
    pub projection: Vec<ProjectedSample>,
}

fn state_response(store: &SessionStore, s: &Session) -> StateResponse {
    let cfg = s.config();
    let proj = store.projection();
    let mut projection: Vec<ProjectedSample> = s
        .query_log()
        .iter()
        .map(|r| ProjectedSample {
            sample_id: r.sample_id,
            x: proj[r.sample_id][0],
            y: proj[r.sample_id][1],
            label: Some(r.label),
        })
        .collect();
    let pending = s.pending_query().map(|q| query_response(store, q));
    if let Some(q) = &pending {
        projection.push(ProjectedSample {
            sample_id: q.sample_id,
            x: q.projection[0],
            y: q.projection[1],
            label: None,
        });
    }
    StateResponse {
        session_id: s.id().to_string(),
        class: cfg.class_name.clone(),
        strategy: cfg.strategy.kind,
        prior: cfg.schedule.kind,
        status: s.status(),
        t: s.t(),
        max_iters: cfg.max_iters,
        budget: cfg.budget,
        rho: s.balance().rho,
        rho_prime: cfg.strategy.rho_prime,
        n_pos: s.balance().n_pos,
        n_neg: s.balance().n_neg,
        tracker: *s.tracker(),
        tracker_per_zone: s.tracker().per_zone(),
        zone_histogram: s.zone_histogram(),
        curve: s
            .iterations()
            .iter()
            .map(|r| CurvePoint { t: r.t, test_ap: r.test_ap })
            .collect(),
        query_log: s.query_log().to_vec(),
        pending,
        has_ground_truth: s.has_ground_truth(),
        projection,
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    pub has_ground_truth: bool,
    pub has_prior: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetaResponse {
    pub classes: Vec<ClassInfo>,
    pub strategies: Vec<String>,
    pub priors: Vec<String>,
    pub n_samples: usize,
    pub n_train: usize,
    pub dim: usize,
    pub sessions: usize,
}

pub async fn healthz() -> &'static str {
    "ok"
}

pub async fn meta(State(store): State<AppState>) -> Json<MetaResponse> {
    let data = store.dataset();
    let mut names: Vec<String> = data.labels.class_names().to_vec();
    for t in data.relations.target_names() {
        if !names.contains(t) {
            names.push(t.clone());
        }
    }
    let classes = names
        .into_iter()
        .map(|name| ClassInfo {
            has_ground_truth: data.labels.class_index(&name).is_some(),
            has_prior: data.relations.row_for(&name).is_some(),
            name,
        })
        .collect();
    Json(MetaResponse {
        classes,
        strategies: StrategyKind::ALL.iter().map(|k| k.short_name().to_string()).collect(),
        priors: ["vanilla", "constant", "inverse_decay", "linear_decay"].map(String::from).to_vec(),
        n_samples: data.pool.n_samples(),
        n_train: data.pool.train_indices().len(),
        dim: data.pool.dim(),
        sessions: store.len(),
    })
}

pub async fn create_session(State(store): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<CreateResponse>)> {
    let req: CreateRequest = serde_json::from_slice(&body).map_err(ApiError::from_json)?;
    let reply = blocking(move || {
        let config = req.into_config(&store)?;
        let (session_id, t, status) = store.create(config)?;
        log::info!("created session {session_id}");
        Ok(CreateResponse { session_id, t, status })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(reply)))
}

pub async fn get_query(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<QueryResponse>> {
    blocking(move || {
        let q = store.with_session(&id, |s| s.next_query())??;
        Ok(Json(query_response(&store, &q)))
    })
    .await
}

pub async fn post_label(
    State(store): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<LabelResponse>> {
    let req: LabelRequest = serde_json::from_slice(&body).map_err(ApiError::from_json)?;
    let label = parse_label(&req.label).ok_or_else(|| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_label",
            format!("label must be +1 or -1, got {}", req.label),
        )
        .field("label")
    })?;
    blocking(move || {
        let out = store.with_session(&id, |s| s.submit_label(req.sample_id, label))??;
        Ok(Json(LabelResponse {
            t: out.t,
            rho: out.rho,
            tracker: out.tracker,
            test_ap: out.test_ap,
            iteration_complete: out.iteration_complete,
            status: out.status,
        }))
    })
    .await
}

pub async fn get_state(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StateResponse>> {
    blocking(move || {
        let state = store.with_session(&id, |s| state_response(&store, s))?;
        Ok(Json(state))
    })
    .await
}
