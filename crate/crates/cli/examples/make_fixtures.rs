//! Regenerates the bundled desk-scale fixtures.
//!
//! ```text
//! cargo run -p bikesafe-cli --example make_fixtures -- fixtures
//! ```
//!
//! Everything is seeded, so the output is identical on every run.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use bikesafe_core::geometry::{polyline_length, METRES_PER_DEGREE};
use bikesafe_core::risk_model::{identity_scaling, sigmoid, FittedModel, COLUMNS, N_COLUMNS};
use bikesafe_core::scenario::Edit;
use bikesafe_core::street_graph::{
    build_graph_from_str, segment_features, Bikelane, EdgeIndex, FeatureConfig, GraphEdge, GraphNode, GraphProvenance,
    Hilliness, SegmentFeatures, StreetGraph, Topology,
};
use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const ORIGIN: (f64, f64) = (-79.9600, 40.4400);
const STEP: f64 = 0.0015;
const K: usize = 9;

fn grid_id(i: usize, j: usize) -> i64 {
    1000 + (i * K + j) as i64
}

fn grid_coord(i: usize, j: usize) -> (f64, f64) {
    (ORIGIN.0 + j as f64 * STEP, ORIGIN.1 + i as f64 * STEP)
}

fn row_tags(i: usize) -> Vec<(&'static str, &'static str)> {
    match i {
        0 => vec![("highway", "primary"), ("maxspeed", "35 mph"), ("width", "12"), ("cycleway", "lane")],
        8 => vec![("highway", "primary"), ("maxspeed", "35 mph")],
        4 => vec![("highway", "secondary"), ("maxspeed", "50"), ("width", "10 m")],
        2 => vec![("highway", "tertiary"), ("cycleway:right", "track")],
        6 => vec![("highway", "tertiary"), ("maxspeed", "40"), ("width", "26 ft")],
        3 => vec![("highway", "residential")],
        1 | 7 => vec![("highway", "residential"), ("maxspeed", "25 mph"), ("width", "7")],
        _ => vec![("highway", "living_street"), ("maxspeed", "20")],
    }
}

fn column_tags(j: usize) -> Vec<(&'static str, &'static str)> {
    match j {
        0 | 8 => vec![("highway", "secondary"), ("maxspeed", "30 mph")],
        4 => vec![("highway", "trunk"), ("maxspeed", "60"), ("width", "14")],
        2 => vec![("highway", "tertiary"), ("bicycle", "designated")],
        6 => vec![("highway", "unclassified"), ("width", "8")],
        _ => vec![("highway", "residential")],
    }
}

/// Synthetic 9×9 street grid with tagged speeds, widths, bike lanes, a few
/// curved blocks, a parallel cycle path and a dead-end service spur.
fn town_osm() -> (String, Vec<(i64, f64)>) {
    let mut nodes: Vec<(i64, f64, f64)> = Vec::new();
    for i in 0..K {
        for j in 0..K {
            let (lon, lat) = grid_coord(i, j);
            nodes.push((grid_id(i, j), lon, lat));
        }
    }
    let mut ways: Vec<(Vec<i64>, Vec<(&str, &str)>)> = Vec::new();
    let mut bend = 5000;
    for i in 0..K {
        let mut refs = Vec::new();
        for j in 0..K {
            refs.push(grid_id(i, j));
            // bowed blocks on the residential rows
            if j + 1 < K && (i == 1 || i == 5) && j % 3 == 1 {
                let (lon, lat) = grid_coord(i, j);
                nodes.push((bend, lon + STEP / 2.0, lat + 0.00028));
                refs.push(bend);
                bend += 1;
            }
        }
        ways.push((refs, row_tags(i)));
    }
    for j in 0..K {
        let refs = (0..K).map(|i| grid_id(i, j)).collect();
        ways.push((refs, column_tags(j)));
    }
    // cycle path 5 m north of row 3
    let offset = 5.0 / METRES_PER_DEGREE;
    let mut cycle = Vec::new();
    for j in 0..K {
        let (lon, lat) = grid_coord(3, j);
        nodes.push((6000 + j as i64, lon, lat + offset));
        cycle.push(6000 + j as i64);
    }
    ways.push((cycle, vec![("highway", "cycleway")]));
    // dead-end spur
    let (lon, lat) = grid_coord(4, 8);
    nodes.push((7000, lon + 0.0010, lat + 0.0002));
    ways.push((vec![grid_id(4, 8), 7000], vec![("highway", "service")]));
    // footway that must be ignored
    ways.push((vec![grid_id(0, 0), grid_id(1, 1)], vec![("highway", "footway")]));

    let (min_lon, min_lat) = grid_coord(0, 0);
    let (max_lon, max_lat) = grid_coord(K - 1, K - 1);
    let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"make_fixtures\">\n");
    let _ = writeln!(
        xml,
        "  <bounds minlat=\"{:.7}\" minlon=\"{:.7}\" maxlat=\"{:.7}\" maxlon=\"{:.7}\"/>",
        min_lat - 0.0005,
        min_lon - 0.0005,
        max_lat + 0.0005,
        max_lon + 0.0015
    );
    for (id, lon, lat) in &nodes {
        let _ = writeln!(xml, "  <node id=\"{id}\" lat=\"{lat:.7}\" lon=\"{lon:.7}\"/>");
    }
    for (k, (refs, tags)) in ways.iter().enumerate() {
        let _ = writeln!(xml, "  <way id=\"{}\">", 100 + k);
        for r in refs {
            let _ = writeln!(xml, "    <nd ref=\"{r}\"/>");
        }
        for (key, value) in tags {
            let _ = writeln!(xml, "    <tag k=\"{key}\" v=\"{value}\"/>");
        }
        xml.push_str("  </way>\n");
    }
    xml.push_str("</osm>\n");

    // a ridge along the north-east: steep enough on some blocks to count as hilly
    let elevation = nodes
        .iter()
        .filter(|(id, ..)| *id < 6000)
        .map(|(id, lon, lat)| {
            let x = (lon - ORIGIN.0) / STEP;
            let y = (lat - ORIGIN.1) / STEP;
            let h = 220.0 + 1.2 * y * y + 3.0 * (x * 0.9).sin();
            (*id, (h * 10.0).round() / 10.0)
        })
        .collect();
    (xml, elevation)
}

struct City {
    id: &'static str,
    header: &'static str,
    slight: &'static [&'static str],
    severe: &'static [&'static str],
    date_format: &'static str,
    /// Ground-truth coefficients over the standardized design row.
    truth: [f64; N_COLUMNS],
    seed: u64,
}

/// Design row with fixed reference scaling, used only to draw labels.
fn truth_row(f: &SegmentFeatures) -> [f64; N_COLUMNS] {
    let v = (f.speed_limit - 45.0) / 15.0;
    let w = (f.width - 8.0) / 2.5;
    let beta = (f.betweenness - 0.08) / 0.06;
    let d = (f.dist_intersect - 40.0) / 30.0;
    let h = (f.hilliness == Hilliness::Hilly) as u8 as f64;
    let t = (f.topology == Topology::Curved) as u8 as f64;
    let b = (f.bikelane == Bikelane::With) as u8 as f64;
    [1.0, v, w, beta, d, h, t, b, v * beta, v * b, v * d]
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap_or_else(|e| panic!("{name}: {e}"));
}

fn accident_feed(city: &City, graph: &StreetGraph, betweenness: &[f64], n: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(city.seed);
    let index = EdgeIndex::new(graph);
    let b = bikesafe_core::street_graph::BetweennessResult {
        values: betweenness.to_vec(),
        raw: betweenness.to_vec(),
        mode: bikesafe_core::street_graph::BetweennessMode::Exact,
        normalization: 1.0,
    };
    let cfg = FeatureConfig::default();
    // busier and longer streets see more crashes
    let weights: Vec<f64> = graph.edges().iter().map(|e| e.length * (0.02 + betweenness[e.id as usize])).collect();
    let total: f64 = weights.iter().sum();
    let start = NaiveDate::from_ymd_opt(2012, 1, 1).expect("valid date");
    let mut out = String::from(city.header);
    out.push('\n');
    for row in 0..n {
        let mut pick = rng.gen_range(0.0..total);
        let mut edge = 0;
        while pick > weights[edge] {
            pick -= weights[edge];
            edge += 1;
        }
        let e = &graph.edges()[edge];
        let at = bikesafe_core::geometry::point_along(&e.geometry, rng.gen_range(0.0..e.length));
        let lon = at.x() + rng.gen_range(-0.00008..0.00008);
        let lat = at.y() + rng.gen_range(-0.00008..0.00008);
        let snap = index.nearest_edge(graph, lat, lon, 50.0).expect("jitter stays near the street");
        let f = segment_features(graph, &b, snap.edge, &snap, &cfg).expect("features");
        let eta: f64 = truth_row(&f).iter().zip(&city.truth).map(|(x, a)| x * a).sum();
        let severe = rng.gen_bool(sigmoid(eta));
        let vocab = if severe { city.severe } else { city.slight };
        let label = vocab[rng.gen_range(0..vocab.len())];
        let date = start + Duration::days(rng.gen_range(0..1461));
        let date = date.format(city.date_format).to_string();
        let (lat, lon) = (format!("{lat:.7}"), format!("{lon:.7}"));
        // a handful of broken rows, as real feeds have
        let line = match row {
            17 => format!(",{lon},{label},{date}"),
            41 => format!("{lat},{lon},,{date}"),
            77 => format!("{lat},{lon},{label},not a date"),
            // far outside the network: parsed, then dropped at snapping
            93 => format!("40.5000000,-79.9000000,{label},{date}"),
            _ => format!("{lat},{lon},{label},{date}"),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

fn straight(id: u32, u: i64, v: i64, a: (f64, f64), b: (f64, f64), highway: &str) -> GraphEdge {
    let geometry = vec![[a.0, a.1], [b.0, b.1]];
    GraphEdge {
        id,
        u,
        v,
        length: polyline_length(&geometry),
        geometry,
        highway: highway.into(),
        speed_limit: Some(40.0),
        width: Some(8.0),
        bikelane: false,
    }
}

/// Eight disconnected streets: inside the region three non-local and three
/// local, plus one of each class outside it.
fn scenario_fixture(dir: &Path) {
    let classes = ["primary", "residential", "secondary", "service", "tertiary", "living_street"];
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (k, class) in classes.iter().chain(["primary", "residential"].iter()).enumerate() {
        let lat = 0.001 * k as f64 + if k >= 6 { 0.01 } else { 0.0 };
        let (a, b) = ((0.0, lat), (0.002, lat));
        let (u, v) = (2 * k as i64 + 1, 2 * k as i64 + 2);
        nodes.push(GraphNode { id: u, lat: a.1, lon: a.0, elevation: None });
        nodes.push(GraphNode { id: v, lat: b.1, lon: b.0, elevation: None });
        edges.push(straight(k as u32, u, v, a, b, class));
    }
    let provenance = GraphProvenance {
        bbox: Some([0.0, 0.0, 0.002, 0.017]),
        default_speed: 30.0,
        default_width: 6.0,
        ..GraphProvenance::default()
    };
    let graph = StreetGraph::new(nodes, edges, provenance).expect("valid fixture graph");
    let b = graph.weighted().edge_betweenness(bikesafe_core::street_graph::BetweennessMode::Exact).expect("betweenness");

    // Every coefficient except intercept and bikelane is 0, so each sampled
    // point has s = 1 − σ(a0) = 0.54 before and, on a non-local street with a
    // new lane, 1 − σ(a0 + a_b). Half the region's points are non-local, so the
    // scenario mean is (0.54 + s′)/2 = 0.68, giving s′ = 0.82.
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let mut coefficients = vec![0.0; N_COLUMNS];
    coefficients[0] = logit(0.46);
    coefficients[7] = logit(0.18) - logit(0.46);
    let model = FittedModel {
        city: "fixture".into(),
        columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
        coefficients,
        standard_errors: vec![0.1; N_COLUMNS],
        covariance: (0..N_COLUMNS * N_COLUMNS).map(|k| if k % (N_COLUMNS + 1) == 0 { 0.01 } else { 0.0 }).collect(),
        scaling: identity_scaling(),
        train_window: None,
        n_train: 0,
        converged: true,
        log_likelihood: 0.0,
    };
    let region = vec![[-0.0005, -0.0005], [0.0025, -0.0005], [0.0025, 0.0055], [-0.0005, 0.0055], [-0.0005, -0.0005]];
    let edits = vec![Edit::bikelanes_on_non_local(Some(region.clone()))];

    let sub = dir.join("scenario");
    std::fs::create_dir_all(&sub).expect("fixture dir");
    write(&sub, "graph.json", &(graph.to_json().expect("graph json") + "\n"));
    let mut csv = Vec::new();
    b.write_csv(&mut csv).expect("csv");
    write(&sub, "betweenness.csv", std::str::from_utf8(&csv).expect("utf8"));
    write(&sub, "model.json", &(serde_json::to_string_pretty(&model).expect("model") + "\n"));
    let region_doc = json!({"type": "Feature", "properties": {"name": "fixture district"}, "geometry": {"type": "Polygon", "coordinates": [region]}});
    write(&sub, "region.geojson", &(serde_json::to_string_pretty(&region_doc).expect("region") + "\n"));
    write(&sub, "edits.json", &(serde_json::to_string_pretty(&edits).expect("edits") + "\n"));
}

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let dir = Path::new(&dir);
    std::fs::create_dir_all(dir).expect("fixture dir");

    let (osm, elevation) = town_osm();
    write(dir, "town.osm", &osm);
    let mut elev_csv = String::from("node_id,elevation_m\n");
    for (id, h) in &elevation {
        let _ = writeln!(elev_csv, "{id},{h}");
    }
    write(dir, "town_elevation.csv", &elev_csv);

    let elevation: HashMap<i64, f64> = elevation.into_iter().collect();
    let graph = build_graph_from_str(&osm, Some(&elevation)).expect("fixture OSM builds");
    let betweenness = graph.weighted().edge_betweenness(bikesafe_core::street_graph::BetweennessMode::Exact).expect("betweenness");

    let cities = [
        City {
            id: "london",
            header: "latitude,longitude,severity,date",
            slight: &["Slight", "slight"],
            severe: &["Serious", "Fatal"],
            date_format: "%Y-%m-%d",
            truth: [-1.9, 0.55, -0.15, 0.35, -0.25, 0.3, 0.25, -0.6, 0.2, -0.3, 0.1],
            seed: 11,
        },
        City {
            id: "boston",
            header: "lat,lon,injury_level,date",
            slight: &["0", "1"],
            severe: &["2", "3", "4"],
            date_format: "%m/%d/%Y",
            truth: [-1.6, 0.6, -0.3, 0.25, -0.2, 0.2, 0.35, -0.5, 0.15, -0.35, 0.05],
            seed: 22,
        },
        City {
            id: "pittsburgh",
            header: "dec_lat,dec_long,max_severity,crash_date",
            slight: &["Not injured", "Minor injury"],
            severe: &["Moderate injury", "Major injury", "Killed"],
            date_format: "%Y-%m-%d",
            truth: [-1.5, 0.45, -0.2, 0.3, -0.3, 0.5, 0.3, -0.7, 0.25, -0.25, 0.1],
            seed: 33,
        },
    ];
    for city in &cities {
        let feed = accident_feed(city, &graph, &betweenness.values, 2400);
        write(dir, &format!("{}_accidents.csv", city.id), &feed);
    }
    scenario_fixture(dir);
    eprintln!("fixtures written to {}", dir.display());
}
