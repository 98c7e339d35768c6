//! What-if analysis: apply attribute edits to a copy of the street graph and
//! compare mean safety over a region before and after.

use geo::{Contains, Intersects, Polygon};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geometry::{line_string, point, point_along, polygon};
use crate::risk_model::{FittedModel, ModelError};
use crate::street_graph::{
    segment_features, BetweennessResult, EdgeId, EdgeIndex, FeatureConfig, GraphEdge, GraphError, SegmentFeatures,
    Snap, StreetGraph,
};

/// Highway classes treated as local streets.
pub const LOCAL_CLASSES: [&str; 3] = ["residential", "living_street", "service"];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid edit {index}: {reason}")]
    InvalidEdit { index: usize, reason: String },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("region contains no street segments")]
    EmptyRegion,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Selector {
    EdgeIds {
        edge_ids: Vec<EdgeId>,
    },
    Predicate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exclude_classes: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        polygon: Option<Vec<[f64; 2]>>,
    },
}

/// Exactly one field is set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Change {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bikelane: Option<bool>,
    /// km/h
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_limit: Option<f64>,
    /// metres
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edit {
    pub select: Selector,
    pub set: Change,
}

impl Edit {
    pub fn bikelanes_on_non_local(region: Option<Vec<[f64; 2]>>) -> Self {
        Edit {
            select: Selector::Predicate {
                classes: None,
                exclude_classes: Some(LOCAL_CLASSES.iter().map(|c| c.to_string()).collect()),
                polygon: region,
            },
            set: Change { bikelane: Some(true), ..Change::default() },
        }
    }
}

pub fn parse_edits(text: &str) -> Result<Vec<Edit>> {
    let edits: Vec<Edit> = serde_json::from_str(text)?;
    validate_edits(&edits)?;
    Ok(edits)
}

pub fn validate_edits(edits: &[Edit]) -> Result<()> {
    for (index, e) in edits.iter().enumerate() {
        let bad = |reason: &str| Err(ScenarioError::InvalidEdit { index, reason: reason.to_string() });
        let set = [e.set.bikelane.is_some(), e.set.speed_limit.is_some(), e.set.width.is_some()];
        if set.iter().filter(|s| **s).count() != 1 {
            return bad("`set` must contain exactly one of bikelane, speed_limit, width");
        }
        if e.set.speed_limit.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
            return bad("speed_limit must be positive");
        }
        if e.set.width.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
            return bad("width must be positive");
        }
        if let Selector::Predicate { polygon: Some(ring), .. } = &e.select {
            if let Err(ScenarioError::InvalidRegion(reason)) = region_polygon(ring) {
                return bad(&format!("selector polygon: {reason}"));
            }
        }
    }
    Ok(())
}

/// Validates and closes a `[lon, lat]` ring.
pub fn region_polygon(ring: &[[f64; 2]]) -> Result<Polygon<f64>> {
    if ring.iter().flatten().any(|c| !c.is_finite()) {
        return Err(ScenarioError::InvalidRegion("non-finite coordinate".into()));
    }
    let mut distinct: Vec<[f64; 2]> = Vec::new();
    for c in ring {
        if !distinct.contains(c) {
            distinct.push(*c);
        }
    }
    if distinct.len() < 3 {
        return Err(ScenarioError::InvalidRegion("a polygon needs at least 3 distinct vertices".into()));
    }
    Ok(polygon(ring))
}

fn selects(select: &Selector, edge: &GraphEdge, area: Option<&Polygon<f64>>) -> bool {
    match select {
        Selector::EdgeIds { edge_ids } => edge_ids.contains(&edge.id),
        Selector::Predicate { classes, exclude_classes, .. } => {
            classes.as_ref().is_none_or(|c| c.contains(&edge.highway))
                && exclude_classes.as_ref().is_none_or(|c| !c.contains(&edge.highway))
                && area.is_none_or(|p| p.intersects(&line_string(&edge.geometry)))
        }
    }
}

fn apply_change(change: &Change, edge: &mut GraphEdge) {
    if let Some(b) = change.bikelane {
        edge.bikelane = b;
    }
    if let Some(v) = change.speed_limit {
        edge.speed_limit = Some(v);
    }
    if let Some(w) = change.width {
        edge.width = Some(w);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    pub graph: StreetGraph,
    /// Edges whose attributes differ from the baseline.
    pub changed_edges: Vec<EdgeId>,
    pub warnings: Vec<String>,
}

/// Returns an edited copy; the input graph is left alone. Edits apply in order.
pub fn apply_edits(graph: &StreetGraph, edits: &[Edit]) -> Result<EditOutcome> {
    validate_edits(edits)?;
    let mut warnings = Vec::new();
    let mut plan: Vec<Vec<usize>> = vec![Vec::new(); graph.edges().len()];
    for (i, edit) in edits.iter().enumerate() {
        let area = match &edit.select {
            Selector::Predicate { polygon: Some(ring), .. } => Some(region_polygon(ring)?),
            _ => None,
        };
        if let Selector::EdgeIds { edge_ids } = &edit.select {
            for id in edge_ids.iter().filter(|&&id| id as usize >= graph.edges().len()) {
                warnings.push(format!("edit {i}: edge {id} does not exist"));
            }
        }
        let mut hits = 0;
        for e in graph.edges() {
            if selects(&edit.select, e, area.as_ref()) {
                plan[e.id as usize].push(i);
                hits += 1;
            }
        }
        if hits == 0 {
            warnings.push(format!("edit {i} selects no edges; skipped"));
        }
    }
    let scenario = graph.with_edge_attributes(|edge| {
        for &i in &plan[edge.id as usize] {
            apply_change(&edits[i].set, edge);
        }
    });
    let changed_edges = graph
        .edges()
        .iter()
        .zip(scenario.edges())
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.id)
        .collect();
    Ok(EditOutcome { graph: scenario, changed_edges, warnings })
}

/// How sample points are laid out along the network.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    /// Midpoint of every edge that touches the region.
    Midpoints,
    /// A point every `spacing_m` metres along edges touching the region,
    /// starting half a spacing in; only points inside the region are kept.
    Densify { spacing_m: f64 },
    /// `[lon, lat]` points snapped to the network; only points inside the region are kept.
    Points(Vec<[f64; 2]>),
}

/// A location on a specific edge; its features are recomputed per graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub edge_id: EdgeId,
    pub lon: f64,
    pub lat: f64,
    pub offset_m: f64,
}

impl SamplePoint {
    fn snap(&self) -> Snap {
        Snap { edge: self.edge_id, lon: self.lon, lat: self.lat, offset_m: self.offset_m, distance_m: 0.0 }
    }
}

fn edges_touching(graph: &StreetGraph, region: &Polygon<f64>) -> Vec<EdgeId> {
    graph.edges().iter().filter(|e| region.intersects(&line_string(&e.geometry))).map(|e| e.id).collect()
}

pub fn sample_points(
    graph: &StreetGraph,
    region: &Polygon<f64>,
    sampling: &Sampling,
    snap_radius_m: f64,
) -> Result<Vec<SamplePoint>> {
    let at = |e: &GraphEdge, offset: f64| {
        let p = point_along(&e.geometry, offset);
        SamplePoint { edge_id: e.id, lon: p.x(), lat: p.y(), offset_m: offset }
    };
    let points: Vec<SamplePoint> = match sampling {
        Sampling::Midpoints => {
            edges_touching(graph, region).into_iter().map(|id| &graph.edges()[id as usize]).map(|e| at(e, e.length / 2.0)).collect()
        }
        Sampling::Densify { spacing_m } => {
            if !(spacing_m.is_finite() && *spacing_m > 0.0) {
                return Err(ScenarioError::InvalidRegion("densify spacing must be positive".into()));
            }
            let mut out = Vec::new();
            for id in edges_touching(graph, region) {
                let e = &graph.edges()[id as usize];
                let mut offset = spacing_m / 2.0;
                while offset < e.length {
                    let p = at(e, offset);
                    if region.intersects(&point(p.lon, p.lat)) {
                        out.push(p);
                    }
                    offset += spacing_m;
                }
            }
            out
        }
        Sampling::Points(list) => {
            let index = EdgeIndex::new(graph);
            let mut out = Vec::new();
            for [lon, lat] in list {
                if !region.contains(&point(*lon, *lat)) && !region.intersects(&point(*lon, *lat)) {
                    continue;
                }
                let s = index.nearest_edge(graph, *lat, *lon, snap_radius_m)?;
                out.push(SamplePoint { edge_id: s.edge, lon: s.lon, lat: s.lat, offset_m: s.offset_m });
            }
            out
        }
    };
    if points.is_empty() {
        return Err(ScenarioError::EmptyRegion);
    }
    Ok(points)
}

fn point_features(
    graph: &StreetGraph,
    betweenness: &BetweennessResult,
    points: &[SamplePoint],
    config: &FeatureConfig,
) -> Result<Vec<SegmentFeatures>> {
    points
        .par_iter()
        .map(|p| segment_features(graph, betweenness, p.edge_id, &p.snap(), config).map_err(ScenarioError::from))
        .collect()
}

/// Safety s = 1 − ρ at each point.
pub fn point_safety(
    model: &FittedModel,
    graph: &StreetGraph,
    betweenness: &BetweennessResult,
    points: &[SamplePoint],
    config: &FeatureConfig,
) -> Result<Vec<f64>> {
    point_features(graph, betweenness, points, config)?
        .par_iter()
        .map(|f| model.predict_safety(f).map_err(ScenarioError::from))
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSafety {
    pub points: Vec<SamplePoint>,
    pub safety: Vec<f64>,
    pub mean: f64,
}

pub fn area_safety(
    model: &FittedModel,
    graph: &StreetGraph,
    betweenness: &BetweennessResult,
    region: &[[f64; 2]],
    sampling: &Sampling,
    config: &FeatureConfig,
) -> Result<AreaSafety> {
    let area = region_polygon(region)?;
    let points = sample_points(graph, &area, sampling, config.snap_radius_m)?;
    let safety = point_safety(model, graph, betweenness, &points, config)?;
    Ok(AreaSafety { mean: mean(&safety), points, safety })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub edge_id: EdgeId,
    pub lon: f64,
    pub lat: f64,
    pub baseline_s: f64,
    pub scenario_s: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub region: Vec<[f64; 2]>,
    pub points: Vec<PointResult>,
    pub mean_baseline: f64,
    pub mean_scenario: f64,
    /// (s̄′ − s̄) / s̄
    pub relative_change: f64,
    pub changed_edges: Vec<EdgeId>,
    pub warnings: Vec<String>,
    pub betweenness_recomputed: bool,
}

/// Rounds to the nearest whole percent, e.g. 0.2593 → "26%".
pub fn format_percent(fraction: f64) -> String {
    let pct = (100.0 * fraction).round();
    format!("{}%", if pct == 0.0 { 0.0 } else { pct })
}

impl ScenarioResult {
    pub fn relative_change_percent(&self) -> String {
        format_percent(self.relative_change)
    }

    /// One Point feature per sample point.
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .points
            .iter()
            .map(|p| {
                json!({
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [p.lon, p.lat]},
                    "properties": {
                        "edge_id": p.edge_id,
                        "baseline_s": p.baseline_s,
                        "scenario_s": p.scenario_s,
                        "delta": p.delta,
                    },
                })
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features})
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOptions {
    pub sampling: Sampling,
    pub features: FeatureConfig,
    /// Recompute edge betweenness on the edited graph instead of reusing the baseline values.
    pub recompute_betweenness: bool,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self { sampling: Sampling::Midpoints, features: FeatureConfig::default(), recompute_betweenness: false }
    }
}

/// Scores the baseline and the edited graph over the same sample points.
pub fn compare_scenarios(
    model: &FittedModel,
    graph: &StreetGraph,
    betweenness: &BetweennessResult,
    region: &[[f64; 2]],
    edits: &[Edit],
    options: &ScenarioOptions,
) -> Result<ScenarioResult> {
    let area = region_polygon(region)?;
    let outcome = apply_edits(graph, edits)?;
    let points = sample_points(graph, &area, &options.sampling, options.features.snap_radius_m)?;
    let baseline = point_safety(model, graph, betweenness, &points, &options.features)?;
    let recomputed;
    let scenario_betweenness = if options.recompute_betweenness {
        recomputed = outcome.graph.weighted().edge_betweenness(betweenness.mode)?;
        &recomputed
    } else {
        betweenness
    };
    let scenario = point_safety(model, &outcome.graph, scenario_betweenness, &points, &options.features)?;
    let mean_baseline = mean(&baseline);
    let mean_scenario = mean(&scenario);
    let points = points
        .iter()
        .zip(baseline.iter().zip(&scenario))
        .map(|(p, (&b, &s))| PointResult {
            edge_id: p.edge_id,
            lon: p.lon,
            lat: p.lat,
            baseline_s: b,
            scenario_s: s,
            delta: s - b,
        })
        .collect();
    Ok(ScenarioResult {
        region: region.to_vec(),
        points,
        mean_baseline,
        mean_scenario,
        relative_change: (mean_scenario - mean_baseline) / mean_baseline,
        changed_edges: outcome.changed_edges,
        warnings: outcome.warnings,
        betweenness_recomputed: options.recompute_betweenness,
    })
}
