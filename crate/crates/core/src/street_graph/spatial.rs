use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, AABB};
use serde::{Deserialize, Serialize};

use super::{EdgeId, GraphError, Result, StreetGraph};
use crate::geometry::{self, point, METRES_PER_DEGREE};

pub const DEFAULT_SNAP_RADIUS_M: f64 = 50.0;

/// Distances closer than this are treated as ties.
const TIE_M: f64 = 1e-9;

/// A query point attached to the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snap {
    pub edge: EdgeId,
    pub lon: f64,
    pub lat: f64,
    /// Arc length from the edge's `u` end to the snapped point.
    pub offset_m: f64,
    pub distance_m: f64,
}

type Entry = GeomWithData<Rectangle<[f64; 2]>, EdgeId>;

/// R-tree over edge bounding boxes; exact distances are great-circle.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    tree: RTree<Entry>,
}

impl EdgeIndex {
    pub fn new(graph: &StreetGraph) -> Self {
        let entries = graph
            .edges()
            .iter()
            .map(|e| {
                let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
                for c in &e.geometry {
                    lo = [lo[0].min(c[0]), lo[1].min(c[1])];
                    hi = [hi[0].max(c[0]), hi[1].max(c[1])];
                }
                GeomWithData::new(Rectangle::from_corners(lo, hi), e.id)
            })
            .collect();
        Self { tree: RTree::bulk_load(entries) }
    }

    /// Nearest edge by great-circle distance to its polyline; ties go to the
    /// lowest edge id. Fails when nothing lies within `radius_m`.
    pub fn nearest_edge(&self, graph: &StreetGraph, lat: f64, lon: f64, radius_m: f64) -> Result<Snap> {
        if graph.edges().is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        let dlat = 1.5 * radius_m / METRES_PER_DEGREE;
        let dlon = dlat / lat.to_radians().cos().abs().max(1e-6);
        let envelope = AABB::from_corners([lon - dlon, lat - dlat], [lon + dlon, lat + dlat]);
        let query = point(lon, lat);

        let mut best: Option<Snap> = None;
        for entry in self.tree.locate_in_envelope_intersecting(&envelope) {
            let edge = graph.edge(entry.data)?;
            let proj = geometry::project_onto_polyline(&edge.geometry, query);
            let candidate = Snap {
                edge: edge.id,
                lon: proj.point.x(),
                lat: proj.point.y(),
                offset_m: proj.offset_m,
                distance_m: proj.distance_m,
            };
            best = match best {
                None => Some(candidate),
                Some(b) if candidate.distance_m < b.distance_m - TIE_M => Some(candidate),
                Some(b) if (candidate.distance_m - b.distance_m).abs() <= TIE_M && candidate.edge < b.edge => {
                    Some(candidate)
                }
                keep => keep,
            };
        }
        match best {
            Some(snap) if snap.distance_m <= radius_m => Ok(snap),
            other => Err(GraphError::Unsnappable { radius_m, nearest_m: other.map(|s| s.distance_m) }),
        }
    }

    /// Edges whose bounding boxes intersect `[min_lon, min_lat, max_lon, max_lat]`.
    pub fn edges_in_bbox(&self, bbox: [f64; 4]) -> Vec<EdgeId> {
        let env = AABB::from_corners([bbox[0], bbox[1]], [bbox[2], bbox[3]]);
        let mut ids: Vec<EdgeId> = self.tree.locate_in_envelope_intersecting(&env).map(|e| e.data).collect();
        ids.sort_unstable();
        ids
    }
}
