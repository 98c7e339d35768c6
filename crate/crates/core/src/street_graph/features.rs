use serde::{Deserialize, Serialize};

use super::{BetweennessResult, EdgeId, GraphError, Result, Snap, StreetGraph, DEFAULT_SNAP_RADIUS_M};
use crate::geometry::{haversine_m, point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hilliness {
    Flat,
    Hilly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Straight,
    Curved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bikelane {
    Without,
    With,
}

/// Model inputs for one location on the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    /// km/h
    pub speed_limit: f64,
    /// metres
    pub width: f64,
    /// metres to the nearest intersection
    pub dist_intersect: f64,
    pub hilliness: Hilliness,
    pub topology: Topology,
    pub bikelane: Bikelane,
    /// normalized edge betweenness in [0, 1]
    pub betweenness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// arc length / chord above which a segment is curved
    pub sinuosity_threshold: f64,
    /// |elevation change| / arc length above which a segment is hilly
    pub grade_threshold: f64,
    pub snap_radius_m: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { sinuosity_threshold: 1.05, grade_threshold: 0.04, snap_radius_m: DEFAULT_SNAP_RADIUS_M }
    }
}

pub fn segment_features(
    graph: &StreetGraph,
    betweenness: &BetweennessResult,
    edge_id: EdgeId,
    snapped: &Snap,
    config: &FeatureConfig,
) -> Result<SegmentFeatures> {
    let edge = graph.edge(edge_id)?;
    if betweenness.values.len() != graph.edges().len() {
        return Err(GraphError::BetweennessMismatch {
            expected: graph.edges().len(),
            got: betweenness.values.len(),
        });
    }
    let at = point(snapped.lon, snapped.lat);
    let (u, v) = (graph.node(edge.u).expect("validated"), graph.node(edge.v).expect("validated"));
    let ends = [u, v];
    let dist_to = |n: &super::GraphNode| haversine_m(at, point(n.lon, n.lat));
    // Dead ends have no intersection at either side; fall back to the nearest end.
    let intersections: Vec<f64> = ends.iter().filter(|n| graph.degree(n.id) >= 3).map(|n| dist_to(n)).collect();
    let dist_intersect = if intersections.is_empty() {
        ends.iter().map(|n| dist_to(n)).fold(f64::INFINITY, f64::min)
    } else {
        intersections.into_iter().fold(f64::INFINITY, f64::min)
    };

    let first = edge.geometry[0];
    let last = edge.geometry[edge.geometry.len() - 1];
    let chord = haversine_m(point(first[0], first[1]), point(last[0], last[1]));
    let curved = chord <= 0.0 || edge.length / chord > config.sinuosity_threshold;

    let hilly = match (u.elevation, v.elevation) {
        (Some(a), Some(b)) if edge.length > 0.0 => (b - a).abs() / edge.length > config.grade_threshold,
        _ => false,
    };

    Ok(SegmentFeatures {
        speed_limit: graph.effective_speed(edge),
        width: graph.effective_width(edge),
        dist_intersect,
        hilliness: if hilly { Hilliness::Hilly } else { Hilliness::Flat },
        topology: if curved { Topology::Curved } else { Topology::Straight },
        bikelane: if edge.bikelane { Bikelane::With } else { Bikelane::Without },
        betweenness: betweenness.values[edge_id as usize],
    })
}
