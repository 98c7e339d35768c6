//! Glue between stages: snapping accidents and query points to the network
//! and turning them into model inputs or scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::AccidentRecord;
use crate::risk_model::{FittedModel, ModelError};
use crate::street_graph::{
    segment_features, BetweennessResult, EdgeId, EdgeIndex, FeatureConfig, GraphError, SegmentFeatures, StreetGraph,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct AccidentDesign {
    pub features: Vec<SegmentFeatures>,
    pub labels: Vec<u8>,
    /// Records that could not be placed on the network.
    pub dropped: Vec<Dropped>,
}

/// Snaps each accident to its nearest segment and derives its features, in input order.
pub fn accident_features(
    records: &[AccidentRecord],
    graph: &StreetGraph,
    betweenness: &BetweennessResult,
    index: &EdgeIndex,
    config: &FeatureConfig,
) -> Result<AccidentDesign, GraphError> {
    let rows: Vec<Result<(SegmentFeatures, u8), Dropped>> = records
        .par_iter()
        .map(|r| {
            let drop = |e: GraphError| Dropped { id: r.id.clone(), reason: e.to_string() };
            let snap = index.nearest_edge(graph, r.latitude, r.longitude, config.snap_radius_m).map_err(drop)?;
            let f = segment_features(graph, betweenness, snap.edge, &snap, config).map_err(drop)?;
            Ok((f, r.severity.label()))
        })
        .collect();
    if betweenness.values.len() != graph.edges().len() {
        return Err(GraphError::BetweennessMismatch { expected: graph.edges().len(), got: betweenness.values.len() });
    }
    let mut out = AccidentDesign::default();
    for row in rows {
        match row {
            Ok((f, y)) => {
                out.features.push(f);
                out.labels.push(y);
            }
            Err(d) => out.dropped.push(d),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointScore {
    pub risk: f64,
    pub safety: f64,
    pub features: SegmentFeatures,
    pub edge_id: EdgeId,
    pub snap_distance_m: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Risk and safety at a point, using the nearest segment within the snap radius.
pub fn score_point(
    model: &FittedModel,
    graph: &StreetGraph,
    betweenness: &BetweennessResult,
    index: &EdgeIndex,
    lat: f64,
    lon: f64,
    config: &FeatureConfig,
) -> Result<PointScore, ScoreError> {
    let snap = index.nearest_edge(graph, lat, lon, config.snap_radius_m)?;
    let features = segment_features(graph, betweenness, snap.edge, &snap, config)?;
    let risk = model.predict_risk(&features)?;
    Ok(PointScore { risk, safety: 1.0 - risk, features, edge_id: snap.edge, snap_distance_m: snap.distance_m })
}

/// `n` points drawn uniformly from `[min_lon, min_lat, max_lon, max_lat]`.
pub fn random_points(bbox: [f64; 4], n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen_range(bbox[0]..=bbox[2]), rng.gen_range(bbox[1]..=bbox[3])]).collect()
}

/// Bounding box of all node coordinates.
pub fn graph_extent(graph: &StreetGraph) -> [f64; 4] {
    graph.nodes().iter().fold([f64::MAX, f64::MAX, f64::MIN, f64::MIN], |b, n| {
        [b[0].min(n.lon), b[1].min(n.lat), b[2].max(n.lon), b[3].max(n.lat)]
    })
}
