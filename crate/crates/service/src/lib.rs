//! HTTP JSON API over loaded models and one street graph.
//!
//! Endpoints: `GET /v1/models`, `GET /v1/score`, `POST /v1/scenario`,
//! `GET /v1/segments`. Failures are `{status, reason}` bodies.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bikesafe_core::geometry::{line_string, point_along};
use bikesafe_core::pipeline::{score_point, ScoreError};
use bikesafe_core::risk_model::{wald_table, FittedModel, TrainWindow};
use bikesafe_core::scenario::{compare_scenarios, validate_edits, Edit, Sampling, ScenarioError, ScenarioOptions};
use bikesafe_core::street_graph::{
    segment_features, BetweennessMode, BetweennessResult, EdgeIndex, FeatureConfig, GraphError, GraphProvenance, Snap,
    StreetGraph, DEFAULT_SNAP_RADIUS_M,
};
use geo::{Intersects, Rect};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub models: Vec<PathBuf>,
    pub graph: Option<PathBuf>,
    pub betweenness: Option<PathBuf>,
    pub snap_radius_m: f64,
    /// Origins allowed to call the API from a browser.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            models: Vec::new(),
            graph: None,
            betweenness: None,
            snap_radius_m: DEFAULT_SNAP_RADIUS_M,
            cors_origins: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| LoadError::Io(path.as_ref().into(), e))?;
        serde_json::from_str(&text).map_err(|e| LoadError::Config(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("model {0}: {1}")]
    Model(PathBuf, String),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("two models for city `{0}`")]
    DuplicateModel(String),
}

/// Immutable after startup; shared by every request.
#[derive(Debug)]
pub struct ServiceState {
    pub models: BTreeMap<String, FittedModel>,
    pub graph: StreetGraph,
    pub betweenness: BetweennessResult,
    pub index: EdgeIndex,
    pub features: FeatureConfig,
}

impl ServiceState {
    pub fn new(
        models: Vec<FittedModel>,
        graph: StreetGraph,
        betweenness: BetweennessResult,
        snap_radius_m: f64,
    ) -> Result<Self, LoadError> {
        if betweenness.values.len() != graph.edges().len() {
            return Err(GraphError::BetweennessMismatch { expected: graph.edges().len(), got: betweenness.values.len() }
                .into());
        }
        let mut map = BTreeMap::new();
        for m in models {
            if map.contains_key(&m.city) {
                return Err(LoadError::DuplicateModel(m.city));
            }
            map.insert(m.city.clone(), m);
        }
        let index = EdgeIndex::new(&graph);
        let features = FeatureConfig { snap_radius_m, ..FeatureConfig::default() };
        Ok(Self { models: map, graph, betweenness, index, features })
    }

    /// Loads artifacts named in the config. Without a betweenness file the
    /// exact values are computed from the graph.
    pub fn load(config: &ServiceConfig) -> Result<Self, LoadError> {
        let mut models = Vec::new();
        for path in &config.models {
            let m = FittedModel::load(path).map_err(|e| LoadError::Model(path.clone(), e.to_string()))?;
            m.check_columns().map_err(|e| LoadError::Model(path.clone(), e.to_string()))?;
            models.push(m);
        }
        let graph_path = config.graph.as_ref().ok_or_else(|| LoadError::Config("no graph configured".into()))?;
        let graph = StreetGraph::load(graph_path)?;
        let betweenness = match &config.betweenness {
            Some(p) => BetweennessResult::read_csv(p, BetweennessMode::Exact, 1.0)?,
            None => graph.weighted().edge_betweenness(BetweennessMode::Exact)?,
        };
        Self::new(models, graph, betweenness, config.snap_radius_m)
    }

    pub fn provenance(&self) -> &GraphProvenance {
        self.graph.provenance()
    }

    fn model(&self, key: Option<&str>) -> Result<(&str, &FittedModel), ApiError> {
        let key = key.ok_or_else(|| ApiError::bad_request("missing `model` parameter"))?;
        self.models
            .get_key_value(key)
            .map(|(k, m)| (k.as_str(), m))
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model `{key}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub reason: String,
}

impl ApiError {
    pub fn new(status: StatusCode, reason: impl Into<String>) -> Self {
        Self { status: status.as_u16(), reason: reason.into() }
    }

    fn bad_request(reason: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, reason)
    }

    fn unprocessable(reason: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, reason)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<ScoreError> for ApiError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Graph(e @ GraphError::Unsnappable { .. }) => ApiError::unprocessable(e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::InvalidEdit { .. } | ScenarioError::Json(_) => ApiError::bad_request(e.to_string()),
            ScenarioError::EmptyRegion | ScenarioError::InvalidRegion(_) => ApiError::unprocessable(e.to_string()),
            ScenarioError::Graph(g @ GraphError::Unsnappable { .. }) => ApiError::unprocessable(g.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

type Shared = Arc<ServiceState>;
type ApiResult = Result<Json<Value>, ApiError>;

pub fn router(state: Shared, cors_origins: &[String]) -> Router {
    let app = Router::new()
        .route("/v1/models", get(models))
        .route("/v1/score", get(score))
        .route("/v1/scenario", post(scenario))
        .route("/v1/segments", get(segments))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(state);
    let origins: Vec<HeaderValue> = cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    if origins.is_empty() {
        app
    } else {
        app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
                .allow_headers([axum::http::header::CONTENT_TYPE]),
        )
    }
}

#[derive(Serialize)]
struct ModelSummary<'a> {
    city: &'a str,
    columns: &'a [String],
    coefficients: &'a [f64],
    standard_errors: &'a [f64],
    ci95: Vec<[f64; 2]>,
    train_window: Option<TrainWindow>,
}

async fn models(State(state): State<Shared>) -> ApiResult {
    let summaries: Vec<ModelSummary> = state
        .models
        .values()
        .map(|m| ModelSummary {
            city: &m.city,
            columns: &m.columns,
            coefficients: &m.coefficients,
            standard_errors: &m.standard_errors,
            ci95: wald_table(m).iter().map(|r| [r.ci_low, r.ci_high]).collect(),
            train_window: m.train_window,
        })
        .collect();
    Ok(Json(json!({"models": summaries, "provenance": state.provenance()})))
}

fn number(params: &HashMap<String, String>, key: &str) -> Result<f64, ApiError> {
    let raw = params.get(key).ok_or_else(|| ApiError::bad_request(format!("missing `{key}` parameter")))?;
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ApiError::bad_request(format!("`{key}` must be a number")))
}

async fn score(State(state): State<Shared>, Query(params): Query<HashMap<String, String>>) -> ApiResult {
    let (key, model) = state.model(params.get("model").map(String::as_str))?;
    let lat = number(&params, "lat")?;
    let lon = number(&params, "lon")?;
    let s = score_point(model, &state.graph, &state.betweenness, &state.index, lat, lon, &state.features)?;
    Ok(Json(json!({
        "model": key,
        "risk": s.risk,
        "safety": s.safety,
        "features": s.features,
        "edge_id": s.edge_id,
        "snap_distance_m": s.snap_distance_m,
        "provenance": state.provenance(),
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioRequest {
    model: String,
    region: Vec<[f64; 2]>,
    #[serde(default)]
    edits: Vec<Edit>,
    #[serde(default)]
    densify_m: Option<f64>,
    #[serde(default)]
    recompute_betweenness: bool,
}

async fn scenario(State(state): State<Shared>, body: Bytes) -> ApiResult {
    let req: ScenarioRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed scenario request: {e}")))?;
    validate_edits(&req.edits)?;
    state.model(Some(&req.model))?;
    // Scenario runs are CPU-bound; keep them off the async workers.
    let result = tokio::task::spawn_blocking(move || {
        let (key, model) = state.model(Some(&req.model))?;
        let sampling = match req.densify_m {
            Some(spacing_m) => Sampling::Densify { spacing_m },
            None => Sampling::Midpoints,
        };
        let options =
            ScenarioOptions { sampling, features: state.features, recompute_betweenness: req.recompute_betweenness };
        let r = compare_scenarios(model, &state.graph, &state.betweenness, &req.region, &req.edits, &options)?;
        let geojson = r.to_geojson();
        let mut body = serde_json::to_value(&r).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let obj = body.as_object_mut().expect("struct serializes to an object");
        obj.insert("model".into(), json!(key));
        obj.insert("geojson".into(), geojson);
        obj.insert("provenance".into(), json!(state.provenance()));
        Ok::<Value, ApiError>(body)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(result))
}

fn parse_bbox(raw: Option<&String>) -> Result<[f64; 4], ApiError> {
    let raw = raw.ok_or_else(|| ApiError::unprocessable("missing `bbox` parameter"))?;
    let parts: Vec<f64> = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| ApiError::unprocessable("bbox must be four numbers: min_lon,min_lat,max_lon,max_lat"))?;
    let [a, b, c, d]: [f64; 4] = parts
        .try_into()
        .map_err(|_| ApiError::unprocessable("bbox must be four numbers: min_lon,min_lat,max_lon,max_lat"))?;
    if a > c || b > d {
        return Err(ApiError::unprocessable("bbox minimum exceeds maximum"));
    }
    if !(-180.0..=180.0).contains(&a) || !(-180.0..=180.0).contains(&c) || !(-90.0..=90.0).contains(&b) || !(-90.0..=90.0).contains(&d) {
        return Err(ApiError::unprocessable("bbox outside coordinate range"));
    }
    Ok([a, b, c, d])
}

async fn segments(State(state): State<Shared>, Query(params): Query<HashMap<String, String>>) -> ApiResult {
    let (key, model) = state.model(params.get("model").map(String::as_str))?;
    let bbox = parse_bbox(params.get("bbox"))?;
    let rect = Rect::new((bbox[0], bbox[1]), (bbox[2], bbox[3]));
    let mut features = Vec::new();
    for id in state.index.edges_in_bbox(bbox) {
        let edge = &state.graph.edges()[id as usize];
        if !rect.intersects(&line_string(&edge.geometry)) {
            continue;
        }
        let mid = point_along(&edge.geometry, edge.length / 2.0);
        let snap = Snap { edge: id, lon: mid.x(), lat: mid.y(), offset_m: edge.length / 2.0, distance_m: 0.0 };
        let f = segment_features(&state.graph, &state.betweenness, id, &snap, &state.features)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let risk = model.predict_risk(&f).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": edge.geometry},
            "properties": {
                "edge_id": id,
                "highway": edge.highway,
                "midpoint": [mid.x(), mid.y()],
                "safety_midpoint": 1.0 - risk,
                "features": f,
            },
        }));
    }
    Ok(Json(json!({
        "type": "FeatureCollection",
        "features": features,
        "model": key,
        "provenance": state.provenance(),
    })))
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig, state: ServiceState) -> std::io::Result<()> {
    let addr: SocketAddr = format!("{}:{}", config.host, config.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bad listen address: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    let app = router(Arc::new(state), &config.cors_origins);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
