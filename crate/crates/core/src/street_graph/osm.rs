//! OSM XML extract -> [`StreetGraph`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{EdgeId, GraphEdge, GraphError, GraphNode, GraphProvenance, NodeId, Result, StreetGraph};
use crate::geometry::{self, axis_bearing};

pub const MPH_TO_KMH: f64 = 1.609344;
const FEET_TO_M: f64 = 0.3048;

/// Classes that form the routable street network.
const ROAD_CLASSES: &[&str] = &[
    "motorway", "motorway_link", "trunk", "trunk_link", "primary", "primary_link", "secondary",
    "secondary_link", "tertiary", "tertiary_link", "unclassified", "residential", "living_street",
    "service", "road",
];

const DEFAULT_SPEED_KMH: f64 = 30.0;
const DEFAULT_WIDTH_M: f64 = 6.0;

/// Speed imputed when `maxspeed` is absent, km/h.
fn class_speed(class: &str) -> f64 {
    match class.trim_end_matches("_link") {
        "motorway" => 100.0,
        "trunk" => 80.0,
        "primary" | "secondary" => 50.0,
        "tertiary" | "unclassified" | "road" => 40.0,
        "residential" => 30.0,
        "service" => 20.0,
        "living_street" => 10.0,
        _ => DEFAULT_SPEED_KMH,
    }
}

/// Width used for classes without a single tagged edge, metres.
fn class_width(class: &str) -> f64 {
    match class.trim_end_matches("_link") {
        "motorway" => 14.0,
        "trunk" => 12.0,
        "primary" => 10.0,
        "secondary" => 9.0,
        "tertiary" => 8.0,
        "living_street" => 5.0,
        "service" => 4.0,
        _ => DEFAULT_WIDTH_M,
    }
}

const PARALLEL_CYCLEWAY_M: f64 = 10.0;
const PARALLEL_ANGLE_DEG: f64 = 20.0;

/// Parses an OSM `maxspeed` value into km/h. Non-numeric values such as
/// `none`, `walk` or zone codes yield `None`.
pub fn parse_maxspeed(raw: &str) -> Option<f64> {
    let first = raw.split(';').next()?.trim().to_lowercase();
    let (number, unit) = split_number(&first)?;
    let kmh = match unit.trim() {
        "" | "km/h" | "kmh" | "kph" => number,
        "mph" => number * MPH_TO_KMH,
        _ => return None,
    };
    (kmh > 0.0).then_some(kmh)
}

/// Parses an OSM `width` value into metres (`7`, `7.5 m`, `20 ft`, `20'`).
pub fn parse_width(raw: &str) -> Option<f64> {
    let text = raw.trim().to_lowercase().replace(',', ".");
    let (number, unit) = split_number(&text)?;
    let metres = match unit.trim() {
        "" | "m" | "meters" | "metres" => number,
        "ft" | "'" | "feet" => number * FEET_TO_M,
        _ => return None,
    };
    (metres > 0.0).then_some(metres)
}

fn split_number(text: &str) -> Option<(f64, &str)> {
    let end = text
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.'))
        .map_or(text.len(), |(i, _)| i);
    let number = text[..end].parse().ok()?;
    Some((number, &text[end..]))
}

#[derive(Debug, Default)]
struct Way {
    id: i64,
    refs: Vec<NodeId>,
    tags: BTreeMap<String, String>,
}

impl Way {
    fn tag(&self, key: &str) -> Option<&str> {
        self.tags.get(key).map(String::as_str)
    }

    fn is_road(&self) -> bool {
        self.tag("highway").is_some_and(|h| ROAD_CLASSES.contains(&h)) && self.tag("area") != Some("yes")
    }

    fn is_cycleway(&self) -> bool {
        match self.tag("highway") {
            Some("cycleway") => true,
            Some("path") => self.tag("bicycle") == Some("designated"),
            _ => false,
        }
    }

    fn has_bike_tags(&self) -> bool {
        let lane = |v: Option<&str>| matches!(v, Some("lane" | "track" | "opposite_lane" | "opposite_track"));
        ["cycleway", "cycleway:both", "cycleway:left", "cycleway:right"]
            .iter()
            .any(|k| lane(self.tag(k)))
            || self.tag("bicycle") == Some("designated")
    }
}

struct Extract {
    coords: HashMap<NodeId, [f64; 2]>,
    ways: Vec<Way>,
    bounds: Option<[f64; 4]>,
}

fn attr(e: &BytesStart<'_>, key: &[u8]) -> Result<Option<String>> {
    for a in e.attributes() {
        let a = a.map_err(|err| GraphError::Xml(err.to_string()))?;
        if a.key.as_ref() == key {
            let value = a.unescape_value().map_err(|err| GraphError::Xml(err.to_string()))?;
            return Ok(Some(value.into_owned()));
        }
    }
    Ok(None)
}

fn required<T: std::str::FromStr>(e: &BytesStart<'_>, key: &str) -> Result<T> {
    let raw = attr(e, key.as_bytes())?.ok_or_else(|| {
        GraphError::Xml(format!("<{}> without `{key}`", String::from_utf8_lossy(e.name().as_ref())))
    })?;
    raw.parse()
        .map_err(|_| GraphError::Xml(format!("bad `{key}` value `{raw}`")))
}

fn parse_extract(xml: &str) -> Result<Extract> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);
    let mut coords = HashMap::new();
    let mut ways = Vec::new();
    let mut bounds = None;
    let mut current: Option<Way> = None;
    let mut saw_root = false;
    let mut depth = 0usize;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| GraphError::Xml(format!("at byte {}: {e}", reader.buffer_position())))?;
        let (start, empty) = match &event {
            Event::Start(e) => (Some(e), false),
            Event::Empty(e) => (Some(e), true),
            Event::End(e) => {
                depth = depth.checked_sub(1).ok_or_else(|| GraphError::Xml("unbalanced end tag".into()))?;
                if e.name().as_ref() == b"way" {
                    ways.extend(current.take());
                }
                continue;
            }
            Event::Eof => break,
            _ => continue,
        };
        let Some(e) = start else { continue };
        if !empty {
            depth += 1;
        }
        match e.name().as_ref() {
            b"osm" => saw_root = true,
            b"bounds" => {
                bounds = Some([
                    required(e, "minlon")?,
                    required(e, "minlat")?,
                    required(e, "maxlon")?,
                    required(e, "maxlat")?,
                ]);
            }
            b"node" => {
                let id: NodeId = required(e, "id")?;
                let lat: f64 = required(e, "lat")?;
                let lon: f64 = required(e, "lon")?;
                coords.insert(id, [lon, lat]);
            }
            b"way" => {
                let way = Way { id: required(e, "id")?, ..Way::default() };
                if empty {
                    ways.push(way);
                } else {
                    current = Some(way);
                }
            }
            b"nd" => {
                if let Some(way) = current.as_mut() {
                    way.refs.push(required(e, "ref")?);
                }
            }
            b"tag" => {
                if let Some(way) = current.as_mut() {
                    let k = attr(e, b"k")?.unwrap_or_default();
                    let v = attr(e, b"v")?.unwrap_or_default();
                    way.tags.insert(k, v);
                }
            }
            _ => {}
        }
    }
    if !saw_root {
        return Err(GraphError::Xml("missing <osm> root element".into()));
    }
    if depth != 0 {
        return Err(GraphError::Xml("unterminated element".into()));
    }
    Ok(Extract { coords, ways, bounds })
}

/// Contiguous stretches of a way whose nodes all exist in the extract.
fn runs(way: &Way, coords: &HashMap<NodeId, [f64; 2]>) -> Vec<Vec<NodeId>> {
    let mut out = Vec::new();
    let mut run: Vec<NodeId> = Vec::new();
    for &r in &way.refs {
        if coords.contains_key(&r) {
            if run.last() != Some(&r) {
                run.push(r);
            }
        } else if !run.is_empty() {
            out.push(std::mem::take(&mut run));
        }
    }
    out.push(run);
    out.retain(|r| r.len() >= 2);
    out
}

/// Reads an OSM XML extract and builds the street graph. `elevation` maps OSM
/// node ids to metres above sea level.
pub fn build_graph(path: impl AsRef<Path>, elevation: Option<&HashMap<NodeId, f64>>) -> Result<StreetGraph> {
    let xml = std::fs::read_to_string(path)?;
    build_graph_from_str(&xml, elevation)
}

pub fn build_graph_from_str(xml: &str, elevation: Option<&HashMap<NodeId, f64>>) -> Result<StreetGraph> {
    let Extract { coords, mut ways, bounds } = parse_extract(xml)?;
    ways.sort_by_key(|w| w.id);

    let road_runs: Vec<(&Way, Vec<NodeId>)> = ways
        .iter()
        .filter(|w| w.is_road())
        .flat_map(|w| runs(w, &coords).into_iter().map(move |r| (w, r)))
        .collect();
    if road_runs.is_empty() {
        return Err(GraphError::NoRoads);
    }
    let cycle_lines: Vec<Vec<[f64; 2]>> = ways
        .iter()
        .filter(|w| w.is_cycleway())
        .flat_map(|w| runs(w, &coords))
        .map(|r| r.iter().map(|id| coords[id]).collect())
        .collect();

    // Topological degree: an interior vertex contributes two edge ends, an endpoint one.
    let mut degree: HashMap<NodeId, usize> = HashMap::new();
    let mut endpoints: HashSet<NodeId> = HashSet::new();
    for (_, run) in &road_runs {
        let last = run.len() - 1;
        for (i, id) in run.iter().enumerate() {
            *degree.entry(*id).or_default() += if i == 0 || i == last { 1 } else { 2 };
        }
        endpoints.insert(run[0]);
        endpoints.insert(run[last]);
    }
    let is_graph_node = |id: &NodeId| endpoints.contains(id) || degree[id] >= 3;

    let mut edges = Vec::new();
    for (way, run) in &road_runs {
        let mut start = 0;
        for i in 1..run.len() {
            if i == run.len() - 1 || is_graph_node(&run[i]) {
                let geometry: Vec<[f64; 2]> = run[start..=i].iter().map(|id| coords[id]).collect();
                let length = geometry::polyline_length(&geometry);
                let highway = way.tag("highway").unwrap_or_default().to_string();
                let mut bikelane = way.has_bike_tags();
                if !bikelane {
                    bikelane = has_parallel_cycleway(&geometry, length, &cycle_lines);
                }
                edges.push(GraphEdge {
                    id: edges.len() as EdgeId,
                    u: run[start],
                    v: run[i],
                    geometry,
                    highway,
                    speed_limit: way.tag("maxspeed").and_then(parse_maxspeed),
                    width: way.tag("width").and_then(parse_width),
                    bikelane,
                    length,
                });
                start = i;
            }
        }
    }

    let mut node_ids: Vec<NodeId> = edges.iter().flat_map(|e| [e.u, e.v]).collect();
    node_ids.sort_unstable();
    node_ids.dedup();
    let nodes: Vec<GraphNode> = node_ids
        .iter()
        .map(|id| GraphNode {
            id: *id,
            lon: coords[id][0],
            lat: coords[id][1],
            elevation: elevation.and_then(|m| m.get(id).copied()),
        })
        .collect();

    let provenance = imputation(&edges, &nodes, bounds.or_else(|| extent(coords.values())));
    StreetGraph::new(nodes, edges, provenance)
}

fn extent<'a>(coords: impl Iterator<Item = &'a [f64; 2]>) -> Option<[f64; 4]> {
    coords.fold(None, |acc, c| {
        Some(match acc {
            None => [c[0], c[1], c[0], c[1]],
            Some([a, b, x, y]) => [a.min(c[0]), b.min(c[1]), x.max(c[0]), y.max(c[1])],
        })
    })
}

fn imputation(edges: &[GraphEdge], nodes: &[GraphNode], bbox: Option<[f64; 4]>) -> GraphProvenance {
    let mut widths: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut classes: Vec<&str> = Vec::new();
    for e in edges {
        classes.push(&e.highway);
        if let Some(w) = e.width {
            widths.entry(e.highway.clone()).or_default().push(w);
        }
    }
    classes.sort_unstable();
    classes.dedup();

    let speed_by_class = classes.iter().map(|c| (c.to_string(), class_speed(c))).collect();
    let width_by_class = classes
        .iter()
        .map(|c| {
            let w = widths.get_mut(*c).map_or_else(|| class_width(c), |v| median(v));
            (c.to_string(), w)
        })
        .collect();
    GraphProvenance {
        bbox,
        source_sha256: None,
        speed_by_class,
        width_by_class,
        default_speed: DEFAULT_SPEED_KMH,
        default_width: DEFAULT_WIDTH_M,
        edges_missing_speed: edges.iter().filter(|e| e.speed_limit.is_none()).count(),
        edges_missing_width: edges.iter().filter(|e| e.width.is_none()).count(),
        elevation_nodes: nodes.iter().filter(|n| n.elevation.is_some()).count(),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// True when a cycleway runs alongside the edge's midpoint within 10 m.
fn has_parallel_cycleway(geometry: &[[f64; 2]], length: f64, cycle_lines: &[Vec<[f64; 2]>]) -> bool {
    let first = geometry[0];
    let last = geometry[geometry.len() - 1];
    if first == last || cycle_lines.is_empty() {
        return false;
    }
    let mid = geometry::point_along(geometry, length / 2.0);
    let road_axis = axis_bearing(first, last);
    cycle_lines.iter().any(|line| {
        line.windows(2).any(|w| {
            if geometry::project_onto_polyline(w, mid).distance_m > PARALLEL_CYCLEWAY_M {
                return false;
            }
            let diff = (axis_bearing(w[0], w[1]) - road_axis).abs();
            diff.min(180.0 - diff) <= PARALLEL_ANGLE_DEG
        })
    })
}

/// Reads `node_id,elevation_m` rows (header required).
pub fn read_elevation_csv(path: impl AsRef<Path>) -> Result<HashMap<NodeId, f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let parse = |col: usize| row.get(col).and_then(|s| s.parse::<f64>().ok());
        let (Some(id), Some(elev)) = (row.get(0).and_then(|s| s.parse::<NodeId>().ok()), parse(1)) else {
            return Err(GraphError::Elevation(format!("row {} is not `node_id,elevation_m`", i + 1)));
        };
        out.insert(id, elev);
    }
    Ok(out)
}
