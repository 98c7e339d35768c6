//! Street network: intersections as nodes, street segments as edges.

mod betweenness;
mod features;
mod osm;
mod spatial;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use betweenness::{BetweennessMode, BetweennessResult, WeightedGraph};
pub use features::{segment_features, Bikelane, FeatureConfig, Hilliness, SegmentFeatures, Topology};
pub use osm::{build_graph, build_graph_from_str, parse_maxspeed, parse_width, read_elevation_csv, MPH_TO_KMH};
pub use spatial::{EdgeIndex, Snap, DEFAULT_SNAP_RADIUS_M};

use crate::geometry;

pub type NodeId = i64;
pub type EdgeId = u32;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed OSM XML: {0}")]
    Xml(String),
    #[error("extract contains no road ways")]
    NoRoads,
    #[error("edge {edge} references unknown node {node}")]
    DanglingEdge { edge: EdgeId, node: NodeId },
    #[error("edge {edge}: {reason}")]
    InvalidEdge { edge: EdgeId, reason: String },
    #[error("edge ids must be 0..n in order, found {found} at position {position}")]
    EdgeIdOrder { position: usize, found: EdgeId },
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("sample size must be positive, got {0}")]
    InvalidSampleSize(i64),
    #[error("betweenness covers {got} edges, graph has {expected}")]
    BetweennessMismatch { expected: usize, got: usize },
    #[error("graph is empty")]
    EmptyGraph,
    #[error("no segment within {radius_m} m")]
    Unsnappable { radius_m: f64, nearest_m: Option<f64> },
    #[error("invalid betweenness file: {0}")]
    BetweennessFormat(String),
    #[error("elevation file: {0}")]
    Elevation(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: NodeId,
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elevation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub id: EdgeId,
    pub u: NodeId,
    pub v: NodeId,
    /// `[lon, lat]` vertices from `u` to `v`.
    pub geometry: Vec<[f64; 2]>,
    pub highway: String,
    /// km/h; `None` when the source had no usable tag.
    pub speed_limit: Option<f64>,
    /// metres; `None` when the source had no usable tag.
    pub width: Option<f64>,
    pub bikelane: bool,
    /// Great-circle arc length of `geometry` in metres.
    pub length: f64,
}

/// Where the graph came from and how missing attributes get filled.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GraphProvenance {
    /// `[min_lon, min_lat, max_lon, max_lat]` of the supplied extract.
    pub bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_sha256: Option<String>,
    /// Imputed speed limit per highway class, km/h.
    pub speed_by_class: BTreeMap<String, f64>,
    /// Imputed width per highway class (median of tagged edges), metres.
    pub width_by_class: BTreeMap<String, f64>,
    pub default_speed: f64,
    pub default_width: f64,
    pub edges_missing_speed: usize,
    pub edges_missing_width: usize,
    pub elevation_nodes: usize,
}

impl GraphProvenance {
    pub fn speed_for(&self, class: &str) -> f64 {
        self.speed_by_class.get(class).copied().unwrap_or(self.default_speed)
    }

    pub fn width_for(&self, class: &str) -> f64 {
        self.width_by_class.get(class).copied().unwrap_or(self.default_width)
    }
}

#[derive(Serialize, Deserialize)]
struct GraphDocument {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    #[serde(default)]
    provenance: GraphProvenance,
}

/// Immutable street graph. Edge ids equal their position in [`StreetGraph::edges`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GraphDocument", into = "GraphDocument")]
pub struct StreetGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    provenance: GraphProvenance,
    node_index: HashMap<NodeId, usize>,
    degree: Vec<usize>,
}

impl PartialEq for StreetGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges && self.provenance == other.provenance
    }
}

impl TryFrom<GraphDocument> for StreetGraph {
    type Error = GraphError;

    fn try_from(doc: GraphDocument) -> Result<Self> {
        StreetGraph::new(doc.nodes, doc.edges, doc.provenance)
    }
}

impl From<StreetGraph> for GraphDocument {
    fn from(g: StreetGraph) -> Self {
        GraphDocument { nodes: g.nodes, edges: g.edges, provenance: g.provenance }
    }
}

/// Relative tolerance between a stored edge length and its recomputed arc length.
const LENGTH_TOLERANCE: f64 = 1e-3;

impl StreetGraph {
    pub fn new(nodes: Vec<GraphNode>, edges: Vec<GraphEdge>, provenance: GraphProvenance) -> Result<Self> {
        let node_index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut degree = vec![0usize; nodes.len()];
        for (position, edge) in edges.iter().enumerate() {
            if edge.id as usize != position {
                return Err(GraphError::EdgeIdOrder { position, found: edge.id });
            }
            for end in [edge.u, edge.v] {
                let idx = *node_index
                    .get(&end)
                    .ok_or(GraphError::DanglingEdge { edge: edge.id, node: end })?;
                degree[idx] += 1;
            }
            let invalid = |reason: String| GraphError::InvalidEdge { edge: edge.id, reason };
            if edge.geometry.len() < 2 {
                return Err(invalid("geometry needs at least two vertices".into()));
            }
            let arc = geometry::polyline_length(&edge.geometry);
            if (edge.length - arc).abs() > LENGTH_TOLERANCE * arc.max(1e-9) {
                return Err(invalid(format!("length {} differs from arc length {arc}", edge.length)));
            }
            if edge.speed_limit.is_some_and(|v| !(v > 0.0)) {
                return Err(invalid("speed limit must be positive".into()));
            }
            if edge.width.is_some_and(|w| !(w > 0.0)) {
                return Err(invalid("width must be positive".into()));
            }
        }
        Ok(Self { nodes, edges, provenance, node_index, degree })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> Result<&GraphEdge> {
        self.edges.get(id as usize).ok_or(GraphError::UnknownEdge(id))
    }

    pub fn node(&self, id: NodeId) -> Option<&GraphNode> {
        self.node_index.get(&id).map(|&i| &self.nodes[i])
    }

    /// Number of incident edge ends (a self-loop counts twice).
    pub fn degree(&self, id: NodeId) -> usize {
        self.node_index.get(&id).map_or(0, |&i| self.degree[i])
    }

    pub fn provenance(&self) -> &GraphProvenance {
        &self.provenance
    }

    pub fn set_source_sha256(&mut self, digest: String) {
        self.provenance.source_sha256 = Some(digest);
    }

    pub fn effective_speed(&self, edge: &GraphEdge) -> f64 {
        edge.speed_limit.unwrap_or_else(|| self.provenance.speed_for(&edge.highway))
    }

    pub fn effective_width(&self, edge: &GraphEdge) -> f64 {
        edge.width.unwrap_or_else(|| self.provenance.width_for(&edge.highway))
    }

    /// Copy with attribute-only changes applied to selected edges. Topology and
    /// geometry are untouched.
    pub(crate) fn with_edge_attributes(&self, update: impl FnMut(&mut GraphEdge)) -> Self {
        let mut out = self.clone();
        out.edges.iter_mut().for_each(update);
        out
    }

    /// Length-weighted view over dense node indices, for centrality.
    pub fn weighted(&self) -> WeightedGraph {
        let edges = self
            .edges
            .iter()
            .map(|e| (self.node_index[&e.u], self.node_index[&e.v], e.length))
            .collect();
        WeightedGraph::new(self.nodes.len(), edges)
    }
}
