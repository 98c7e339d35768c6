use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use bikesafe_core::risk_model::{identity_scaling, wald_table, FittedModel, COLUMNS, N_COLUMNS};
use bikesafe_core::street_graph::{build_graph_from_str, read_elevation_csv, BetweennessMode};
use bikesafe_service::{router, ServiceConfig, ServiceState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn model(city: &str, coefficients: [f64; N_COLUMNS]) -> FittedModel {
    FittedModel {
        city: city.into(),
        columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
        coefficients: coefficients.to_vec(),
        standard_errors: (0..N_COLUMNS).map(|k| 0.05 + 0.01 * k as f64).collect(),
        covariance: (0..N_COLUMNS * N_COLUMNS)
            .map(|k| if k % (N_COLUMNS + 1) == 0 { (0.05 + 0.01 * (k / N_COLUMNS) as f64).powi(2) } else { 0.0 })
            .collect(),
        scaling: identity_scaling(),
        train_window: None,
        n_train: 100,
        converged: true,
        log_likelihood: -50.0,
    }
}

fn town_state(models: Vec<FittedModel>) -> ServiceState {
    let osm = std::fs::read_to_string(fixtures().join("town.osm")).unwrap();
    let elevation = read_elevation_csv(fixtures().join("town_elevation.csv")).unwrap();
    let graph = build_graph_from_str(&osm, Some(&elevation)).unwrap();
    let b = graph.weighted().edge_betweenness(BetweennessMode::Exact).unwrap();
    ServiceState::new(models, graph, b, 50.0).unwrap()
}

fn three_models() -> Vec<FittedModel> {
    vec![
        model("london", [-2.0, 0.02, -0.05, 3.0, -0.004, 0.3, 0.2, -0.5, 0.0, -0.01, 0.0]),
        model("boston", [-1.5, 0.03, -0.02, 2.0, -0.002, 0.2, 0.4, -0.4, 0.01, -0.02, 0.0]),
        model("pittsburgh", [-1.7, 0.01, -0.04, 2.5, -0.003, 0.5, 0.3, -0.6, 0.0, -0.01, 0.0001]),
    ]
}

fn app() -> Router {
    router(Arc::new(town_state(three_models())), &[])
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

// centre of the block between grid nodes (2,3) and (2,4)
const LAT: f64 = 40.4430;
const LON: f64 = -79.95475;

#[tokio::test]
async fn models_lists_summaries_with_wald_intervals() {
    let app = app();
    let (status, body) = get(&app, "/v1/models").await;
    assert_eq!(status, StatusCode::OK);
    let list = body["models"].as_array().unwrap();
    assert_eq!(list.len(), 3);
    let cities: Vec<&str> = list.iter().map(|m| m["city"].as_str().unwrap()).collect();
    assert_eq!(cities, ["boston", "london", "pittsburgh"]);
    let london = &list[1];
    let rows = wald_table(&three_models()[0]);
    for (ci, row) in london["ci95"].as_array().unwrap().iter().zip(&rows) {
        assert_eq!(ci[0].as_f64().unwrap(), row.ci_low);
        assert_eq!(ci[1].as_f64().unwrap(), row.ci_high);
    }
    assert_eq!(london["columns"].as_array().unwrap().len(), N_COLUMNS);
    assert!(body["provenance"].is_object());
}

#[tokio::test]
async fn models_empty_when_none_loaded() {
    let app = router(Arc::new(town_state(vec![])), &[]);
    let (status, body) = get(&app, "/v1/models").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["models"], json!([]));
}

#[tokio::test]
async fn score_is_deterministic_and_complementary() {
    let app = app();
    let uri = format!("/v1/score?model=london&lat={LAT}&lon={LON}");
    let (status, first) = get(&app, &uri).await;
    assert_eq!(status, StatusCode::OK, "{first}");
    let (_, second) = get(&app, &uri).await;
    assert_eq!(first, second);
    let risk = first["risk"].as_f64().unwrap();
    let safety = first["safety"].as_f64().unwrap();
    assert!(risk > 0.0 && risk < 1.0);
    assert!((risk + safety - 1.0).abs() < 1e-12);
    assert_eq!(first["model"], "london");
    assert!(first["snap_distance_m"].as_f64().unwrap() < 1.0);
    for key in ["speed_limit", "width", "betweenness", "dist_intersect", "hilliness", "topology", "bikelane"] {
        assert!(first["features"].get(key).is_some(), "missing feature {key}");
    }
}

#[tokio::test]
async fn score_far_from_streets_is_unprocessable() {
    let (status, body) = get(&app(), "/v1/score?model=london&lat=40.5&lon=-79.9").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["reason"].as_str().unwrap().contains("no segment within 50 m"), "{body}");
}

#[tokio::test]
async fn score_errors() {
    let app = app();
    let (status, _) = get(&app, &format!("/v1/score?model=paris&lat={LAT}&lon={LON}")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&app, &format!("/v1/score?model=london&lat=north&lon={LON}")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get(&app, "/v1/nothing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

fn region() -> Value {
    json!([[-79.9575, 40.4415], [-79.9500, 40.4415], [-79.9500, 40.4475], [-79.9575, 40.4475], [-79.9575, 40.4415]])
}

#[tokio::test]
async fn scenario_without_edits_changes_nothing() {
    let app = app();
    let (status, body) =
        call(&app, Method::POST, "/v1/scenario", Some(json!({"model": "boston", "region": region(), "edits": []}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["mean_baseline"], body["mean_scenario"]);
    assert_eq!(body["relative_change"].as_f64().unwrap(), 0.0);
    for p in body["points"].as_array().unwrap() {
        assert_eq!(p["delta"].as_f64().unwrap(), 0.0);
    }
    assert_eq!(body["geojson"]["type"], "FeatureCollection");
}

#[tokio::test]
async fn scenario_bike_lanes_raise_safety() {
    let app = app();
    let edits = json!([{"select": {"exclude_classes": ["residential", "living_street", "service"]}, "set": {"bikelane": true}}]);
    let (status, body) =
        call(&app, Method::POST, "/v1/scenario", Some(json!({"model": "london", "region": region(), "edits": edits})))
            .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(body["mean_scenario"].as_f64().unwrap() > body["mean_baseline"].as_f64().unwrap());
    assert!(!body["changed_edges"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn scenario_rejections() {
    let app = app();
    let (status, _) = call(&app, Method::POST, "/v1/scenario", Some(json!({"model": "london"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let bad_edit = json!([{"select": {"edge_ids": [1]}, "set": {"bikelane": true, "speed_limit": 20}}]);
    let (status, _) =
        call(&app, Method::POST, "/v1/scenario", Some(json!({"model": "london", "region": region(), "edits": bad_edit})))
            .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) =
        call(&app, Method::POST, "/v1/scenario", Some(json!({"model": "rome", "region": region(), "edits": []}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let empty = json!([[0.0, 0.0], [0.001, 0.0], [0.001, 0.001], [0.0, 0.0]]);
    let (status, body) =
        call(&app, Method::POST, "/v1/scenario", Some(json!({"model": "london", "region": empty, "edits": []}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    let raw = Request::builder().method(Method::POST).uri("/v1/scenario").body(Body::from("{not json")).unwrap();
    assert_eq!(app.clone().oneshot(raw).await.unwrap().status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn concurrent_scenarios_agree() {
    let app = app();
    let edits = json!([{"select": {"classes": ["primary", "tertiary"]}, "set": {"speed_limit": 20}}]);
    let req = json!({"model": "pittsburgh", "region": region(), "edits": edits});
    let runs = (0..8).map(|_| {
        let app = app.clone();
        let req = req.clone();
        tokio::spawn(async move { call(&app, Method::POST, "/v1/scenario", Some(req)).await })
    });
    let mut results = Vec::new();
    for r in runs {
        results.push(r.await.unwrap());
    }
    assert!(results.iter().all(|(s, b)| *s == StatusCode::OK && *b == results[0].1));
}

#[tokio::test]
async fn scenario_fixture_matches_reference_means() {
    let dir = fixtures().join("scenario");
    let config = ServiceConfig {
        models: vec![dir.join("model.json")],
        graph: Some(dir.join("graph.json")),
        betweenness: Some(dir.join("betweenness.csv")),
        ..ServiceConfig::default()
    };
    let app = router(Arc::new(ServiceState::load(&config).unwrap()), &[]);
    let region: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("region.geojson")).unwrap()).unwrap();
    let edits: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("edits.json")).unwrap()).unwrap();
    let req = json!({"model": "fixture", "region": region["geometry"]["coordinates"][0], "edits": edits});
    let (status, body) = call(&app, Method::POST, "/v1/scenario", Some(req)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!((body["mean_baseline"].as_f64().unwrap() - 0.54).abs() < 1e-12);
    assert!((body["mean_scenario"].as_f64().unwrap() - 0.68).abs() < 1e-12);
    assert_eq!(body["points"].as_array().unwrap().len(), 6);
}

#[tokio::test]
async fn segments_in_bbox() {
    let app = app();
    let (status, body) = get(&app, "/v1/segments?model=london&bbox=-79.9575,40.4415,-79.9500,40.4475").await;
    assert_eq!(status, StatusCode::OK);
    let features = body["features"].as_array().unwrap();
    assert!(!features.is_empty());
    for f in features {
        let s = f["properties"]["safety_midpoint"].as_f64().unwrap();
        assert!(s > 0.0 && s < 1.0);
    }
    let (_, whole) = get(&app, "/v1/segments?model=london&bbox=-80,40,-79,41").await;
    let n_edges = town_state(vec![]).graph.edges().len();
    assert_eq!(whole["features"].as_array().unwrap().len(), n_edges);

    let (status, empty) = get(&app, "/v1/segments?model=london&bbox=0,0,0.001,0.001").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(empty["features"], json!([]));
}

#[tokio::test]
async fn segments_bad_bbox_is_unprocessable() {
    let app = app();
    for bbox in ["1,2,3", "a,b,c,d", "10,10,0,0", "-200,0,0,1"] {
        let (status, _) = get(&app, &format!("/v1/segments?model=london&bbox={bbox}")).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bbox}");
    }
}

#[tokio::test]
async fn segment_midpoints_match_point_scores() {
    let app = app();
    let (_, body) = get(&app, "/v1/segments?model=boston&bbox=-79.9575,40.4415,-79.9500,40.4475").await;
    for f in body["features"].as_array().unwrap().iter().take(10) {
        let mid = &f["properties"]["midpoint"];
        let (lon, lat) = (mid[0].as_f64().unwrap(), mid[1].as_f64().unwrap());
        let (status, score) = get(&app, &format!("/v1/score?model=boston&lat={lat}&lon={lon}")).await;
        assert_eq!(status, StatusCode::OK);
        if score["edge_id"] != f["properties"]["edge_id"] {
            continue;
        }
        let s = f["properties"]["safety_midpoint"].as_f64().unwrap();
        assert!((score["safety"].as_f64().unwrap() - s).abs() < 1e-9);
    }
}

#[tokio::test]
async fn cors_header_for_configured_origin() {
    let app = router(Arc::new(town_state(three_models())), &["http://localhost:5173".to_string()]);
    let req = Request::builder()
        .uri("/v1/models")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(), "http://localhost:5173");
}

#[test]
fn config_file_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{"port": 9000, "models": ["a.json"]}"#).unwrap();
    let cfg = ServiceConfig::from_file(&path).unwrap();
    assert_eq!(cfg.port, 9000);
    assert_eq!(cfg.host, "127.0.0.1");
    std::fs::write(&path, r#"{"prot": 9000}"#).unwrap();
    assert!(ServiceConfig::from_file(&path).is_err());
}
