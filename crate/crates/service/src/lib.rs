//! JSON-over-HTTP API for fitting, prediction, tuning and scanning.
//!
//! Coefficient sets are registered in memory under a content-hash id and
//! never mutated afterwards. Nothing is persisted; restarting the service
//! clears all registrations.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use inspectlens_core::datastore::{self, DatastoreError};
use inspectlens_core::metrics::{check_band_tiling, Band, BANDS};
use inspectlens_core::planner::{
    self, PlannerError, ScanPoint, ScanRequest, TuneRequest, TuneResult,
};
use inspectlens_core::regression::{
    self, CoefficientSet, FitDiagnostics, FitWarning, ModelKind, Observation, PredictionResult,
    RegressionError, Regressor, RegressorVector,
};

/// Registered coefficient sets, keyed by content id.
#[derive(Debug, Default)]
pub struct ApiState {
    coefficients: RwLock<HashMap<String, Arc<CoefficientSet>>>,
}

impl ApiState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `set` unless a set with the same id exists; returns the id and the stored set.
    pub fn register(&self, set: CoefficientSet) -> (String, Arc<CoefficientSet>) {
        let id = set.content_id();
        let mut map = self.coefficients.write().unwrap_or_else(|e| e.into_inner());
        let stored = map
            .entry(id.clone())
            .or_insert_with(|| Arc::new(set))
            .clone();
        (id, stored)
    }

    pub fn get(&self, id: &str) -> Option<Arc<CoefficientSet>> {
        self.coefficients
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.coefficients
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Origin allowed by CORS, or `*` for any. No CORS headers when unset.
    pub cors_origin: Option<String>,
}

/// Error body: `{"error": <class>, "message": <text>}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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
    fn new(status: StatusCode, class: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: class.to_string(),
                message: message.into(),
            },
        }
    }

    fn unprocessable(class: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, class, message)
    }

    fn unknown_id(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "UnknownCoefficientSet",
            format!("no coefficient set registered under {id:?}"),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::unprocessable("SchemaViolation", r.body_text())
    }
}

impl From<RegressionError> for ApiError {
    fn from(e: RegressionError) -> Self {
        let class = match &e {
            RegressionError::InsufficientRows { .. } => "InsufficientRows",
            RegressionError::ArityMismatch(_) => "ArityMismatch",
            RegressionError::RankDeficient { .. } => "RankDeficient",
            RegressionError::ShapeMismatch(_) => "ShapeMismatch",
            RegressionError::NonFinite(_) => "NonFinite",
            RegressionError::DiagnosticsMismatch(_) => "DiagnosticsMismatch",
            RegressionError::Metrics(_) => "MetricsError",
        };
        ApiError::unprocessable(class, e.to_string())
    }
}

impl From<PlannerError> for ApiError {
    fn from(e: PlannerError) -> Self {
        let class = match &e {
            PlannerError::UnsolvableParameter { .. } => "UnsolvableParameter",
            PlannerError::ArityMismatch(_) => "ArityMismatch",
            PlannerError::InvalidRange(_) => "InvalidRange",
            PlannerError::EmptyGrid { .. } => "EmptyGrid",
            PlannerError::GridTooLarge { .. } => "GridTooLarge",
            PlannerError::WrongModel(_) => "WrongModel",
            PlannerError::Regression(inner) => return inner.clone().into(),
        };
        ApiError::unprocessable(class, e.to_string())
    }
}

impl From<DatastoreError> for ApiError {
    fn from(e: DatastoreError) -> Self {
        let class = match &e {
            DatastoreError::SchemaVersionMismatch(_) => "SchemaVersionMismatch",
            _ => "SchemaViolation",
        };
        ApiError::unprocessable(class, e.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRow {
    #[serde(default)]
    pub project_id: Option<String>,
    pub x: RegressorVector,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRequest {
    pub model: ModelKind,
    pub rows: Vec<FitRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResponse {
    pub coeff_id: String,
    pub model: ModelKind,
    pub betas: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    pub warnings: Vec<FitWarning>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub coeff_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictBody {
    pub coeff_id: String,
    pub x: RegressorVector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneBody {
    pub coeff_id: String,
    pub target: f64,
    pub solve_for: Regressor,
    pub fixed: BTreeMap<Regressor, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanBody {
    pub coeff_id: String,
    pub vary: Regressor,
    pub min: f64,
    pub max: f64,
    pub step: f64,
    pub fixed: BTreeMap<Regressor, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResponse {
    pub points: Vec<ScanPoint>,
}

async fn healthz() -> &'static str {
    "ok"
}

async fn bands() -> Json<Vec<Band>> {
    Json(BANDS.to_vec())
}

fn lookup(state: &ApiState, id: &str) -> Result<Arc<CoefficientSet>, ApiError> {
    state.get(id).ok_or_else(|| ApiError::unknown_id(id))
}

async fn fit(
    State(state): State<Arc<ApiState>>,
    body: Result<Json<FitRequest>, JsonRejection>,
) -> ApiResult<FitResponse> {
    let Json(req) = body?;
    let observations: Vec<Observation> = req
        .rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| Observation {
            source: row.project_id.unwrap_or_else(|| format!("row{}", i + 1)),
            x: row.x,
            y: row.y,
        })
        .collect();
    let dm = regression::build_design_matrix(observations, req.model)?;
    let set = regression::fit_least_squares_at(&dm, Utc::now())?;
    let (coeff_id, stored) = state.register(set);
    Ok(Json(FitResponse {
        coeff_id,
        model: stored.model,
        betas: stored.betas.clone(),
        warnings: stored.diagnostics.warnings(),
        diagnostics: stored.diagnostics.clone(),
    }))
}

async fn register_coefficients(
    State(state): State<Arc<ApiState>>,
    body: Result<Json<serde_json::Value>, JsonRejection>,
) -> ApiResult<RegisterResponse> {
    let Json(value) = body?;
    let set = datastore::coefficients_from_json(&value.to_string())?;
    let (coeff_id, _) = state.register(set);
    Ok(Json(RegisterResponse { coeff_id }))
}

async fn get_coefficients(
    State(state): State<Arc<ApiState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let set = lookup(&state, &id)?;
    let json = datastore::coefficients_to_json(&set)?;
    Ok(([("content-type", "application/json")], json).into_response())
}

async fn predict(
    State(state): State<Arc<ApiState>>,
    body: Result<Json<PredictBody>, JsonRejection>,
) -> ApiResult<PredictionResult> {
    let Json(req) = body?;
    let set = lookup(&state, &req.coeff_id)?;
    Ok(Json(regression::predict(&set, &req.x)?))
}

async fn tune(
    State(state): State<Arc<ApiState>>,
    body: Result<Json<TuneBody>, JsonRejection>,
) -> ApiResult<TuneResult> {
    let Json(req) = body?;
    let set = lookup(&state, &req.coeff_id)?;
    let tune = TuneRequest {
        target_y: req.target,
        solve_for: req.solve_for,
        fixed: req.fixed,
    };
    Ok(Json(planner::solve_parameter(&set, &tune)?))
}

async fn scan(
    State(state): State<Arc<ApiState>>,
    body: Result<Json<ScanBody>, JsonRejection>,
) -> ApiResult<ScanResponse> {
    let Json(req) = body?;
    let set = lookup(&state, &req.coeff_id)?;
    let scan = ScanRequest {
        vary: req.vary,
        min: req.min,
        max: req.max,
        step: req.step,
        fixed: req.fixed,
    };
    Ok(Json(ScanResponse {
        points: planner::scan(&set, &scan)?,
    }))
}

/// Builds the API router. Fails if the band table does not tile `[0, 1]`.
pub fn router(state: Arc<ApiState>, config: &ServiceConfig) -> Result<Router, String> {
    check_band_tiling(&BANDS)?;
    let mut app = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/v1/bands", get(bands))
        .route("/api/v1/fit", post(fit))
        .route("/api/v1/coefficients", post(register_coefficients))
        .route("/api/v1/coefficients/{id}", get(get_coefficients))
        .route("/api/v1/predict", post(predict))
        .route("/api/v1/tune", post(tune))
        .route("/api/v1/scan", post(scan))
        .with_state(state);
    if let Some(origin) = &config.cors_origin {
        let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
        let cors = if origin == "*" {
            cors.allow_origin(Any)
        } else {
            let value =
                HeaderValue::from_str(origin).map_err(|e| format!("bad CORS origin: {e}"))?;
            cors.allow_origin(value)
        };
        app = app.layer(cors);
    }
    Ok(app)
}

/// Serves the API until ctrl-c.
pub async fn serve(
    addr: SocketAddr,
    state: Arc<ApiState>,
    config: ServiceConfig,
) -> std::io::Result<()> {
    let app = router(state, &config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
