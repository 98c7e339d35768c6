use std::collections::BTreeMap;
use std::path::Path;

use bikesafe_core::evaluation::{
    cross_city, evaluate, reliability_svg, write_reliability_csv, write_report_csv, CityData,
};
use bikesafe_core::ingest::{
    filter_dates, filter_window, parse_accident_file, read_jsonl, unify_severity, write_jsonl, SchemaDescriptor,
};
use bikesafe_core::pipeline::{accident_features, graph_extent, random_points, score_point, ScoreError};
use bikesafe_core::risk_model::{
    build_design, compare_models, fit_model, read_design_csv, write_design_csv, FitOptions, FitStatus, FittedModel,
    Scaling, TrainWindow,
};
use bikesafe_core::scenario::{compare_scenarios, parse_edits, Sampling, ScenarioOptions};
use bikesafe_core::street_graph::{
    build_graph, read_elevation_csv, BetweennessMode, BetweennessResult, EdgeIndex, FeatureConfig, GraphError,
    StreetGraph,
};
use bikesafe_service::{ServiceConfig, ServiceState};
use chrono::NaiveDate;
use serde_json::{json, Value};

use crate::provenance::{read_meta, sha256_file, write_file, write_meta};
use crate::{
    BetweennessArgs, Command, CompareArgs, CrossEvalArgs, EvalArgs, Failure, FeaturesArgs, FitArgs, GraphBuildArgs,
    IngestArgs, ScenarioArgs, ScoreArgs, ServeArgs,
};

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::GraphBuild(a) => graph_build(a),
        Command::Betweenness(a) => betweenness(a),
        Command::Features(a) => features(a),
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval(a),
        Command::CrossEval(a) => cross_eval(a),
        Command::Compare(a) => compare(a),
        Command::Score(a) => score(a),
        Command::Scenario(a) => scenario(a),
        Command::Serve(a) => serve(a),
    }
}

fn json_bytes(value: &impl serde::Serialize) -> Result<Vec<u8>, Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<(), Failure>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn load_schema(spec: &str) -> Result<SchemaDescriptor, Failure> {
    if SchemaDescriptor::builtin_ids().any(|id| id == spec) {
        return Ok(SchemaDescriptor::builtin(spec)?);
    }
    if Path::new(spec).exists() {
        return Ok(SchemaDescriptor::from_file(spec)?);
    }
    let known: Vec<_> = SchemaDescriptor::builtin_ids().collect();
    Err(Failure::Usage(format!("unknown schema `{spec}`; use one of {} or a schema file", known.join(", "))))
}

fn ingest(a: IngestArgs) -> Result<(), Failure> {
    let schema = load_schema(&a.schema)?;
    let parsed = parse_accident_file(&a.input, &schema)?;
    let mut records = parsed.accidents.iter().map(|r| unify_severity(r, &schema)).collect::<Result<Vec<_>, _>>()?;
    if let Some(years) = a.window_years {
        records = filter_window(&records, years)?;
    }
    records = filter_dates(&records, a.dates.from, a.dates.to);

    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records)?;
    write_file(&a.out, &buf)?;
    let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &parsed.rejects {
        *reasons.entry(r.reason.as_str()).or_default() += 1;
    }
    if let Some(path) = &a.rejects {
        let bytes = csv_bytes(|buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["row", "reason"])?;
            for r in &parsed.rejects {
                w.write_record([r.row.to_string(), r.reason.clone()])?;
            }
            w.flush()?;
            Ok(())
        })?;
        write_file(path, &bytes)?;
    }
    let severe = records.iter().filter(|r| r.severity.label() == 1).count();
    write_meta(
        &a.out,
        "ingest",
        None,
        &[&a.input],
        json!({
            "schema": schema.id,
            "rows": parsed.rows(),
            "parsed": parsed.accidents.len(),
            "rejected": parsed.rejects.len(),
            "reject_reasons": reasons,
            "written": records.len(),
            "severe": severe,
            "window_years": a.window_years,
            "from": a.dates.from,
            "to": a.dates.to,
        }),
    )?;
    eprintln!("{}: {} records written, {} rows rejected", schema.id, records.len(), parsed.rejects.len());
    Ok(())
}

fn graph_build(a: GraphBuildArgs) -> Result<(), Failure> {
    let elevation = a.elevation.as_ref().map(read_elevation_csv).transpose()?;
    let mut graph = build_graph(&a.osm, elevation.as_ref())?;
    graph.set_source_sha256(sha256_file(&a.osm)?);
    let mut text = graph.to_json()?;
    text.push('\n');
    write_file(&a.out, text.as_bytes())?;
    let mut inputs = vec![a.osm.as_path()];
    if let Some(e) = &a.elevation {
        inputs.push(e);
    }
    write_meta(
        &a.out,
        "graph-build",
        None,
        &inputs,
        json!({"nodes": graph.nodes().len(), "edges": graph.edges().len(), "bbox": graph.provenance().bbox}),
    )?;
    eprintln!("graph: {} nodes, {} edges", graph.nodes().len(), graph.edges().len());
    Ok(())
}

fn pair_count(graph: &StreetGraph) -> f64 {
    let n = graph.nodes().len() as f64;
    if n >= 2.0 {
        n * (n - 1.0) / 2.0
    } else {
        1.0
    }
}

fn load_betweenness(path: &Path, graph: &StreetGraph) -> Result<BetweennessResult, Failure> {
    let b = BetweennessResult::read_csv(path, BetweennessMode::Exact, pair_count(graph))?;
    if b.values.len() != graph.edges().len() {
        return Err(GraphError::BetweennessMismatch { expected: graph.edges().len(), got: b.values.len() }.into());
    }
    Ok(b)
}

fn betweenness(a: BetweennessArgs) -> Result<(), Failure> {
    let graph = StreetGraph::load(&a.graph)?;
    let mode = match a.sample {
        Some(0) => return Err(Failure::Usage("--sample must be positive".into())),
        Some(k) => BetweennessMode::Sampled { k, seed: a.seed },
        None => BetweennessMode::Exact,
    };
    let result = graph.weighted().edge_betweenness(mode)?;
    let bytes = csv_bytes(|buf| Ok(result.write_csv(buf)?))?;
    write_file(&a.out, &bytes)?;
    write_meta(
        &a.out,
        "betweenness",
        a.sample.map(|_| a.seed),
        &[&a.graph],
        json!({"mode": result.mode, "normalization": result.normalization, "edges": result.values.len()}),
    )?;
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<(), Failure> {
    let graph = StreetGraph::load(&a.graph)?;
    let betweenness = load_betweenness(&a.betweenness, &graph)?;
    let records = filter_dates(&read_jsonl(&a.records)?, a.dates.from, a.dates.to);
    if records.is_empty() {
        return Err(Failure::Data("no accident records in the requested date range".into()));
    }
    let index = EdgeIndex::new(&graph);
    let config = FeatureConfig { snap_radius_m: a.snap_radius_m, ..FeatureConfig::default() };
    let joined = accident_features(&records, &graph, &betweenness, &index, &config)?;
    if joined.features.is_empty() {
        return Err(Failure::Data("no accident could be snapped to the network".into()));
    }
    let design = build_design(&joined.features, Scaling::None)?;
    let bytes = csv_bytes(|buf| Ok(write_design_csv(buf, &design.matrix, &joined.labels)?))?;
    write_file(&a.out, &bytes)?;

    let cities: std::collections::BTreeSet<&str> = records.iter().map(|r| r.source_city.as_str()).collect();
    let from = records.iter().map(|r| r.date).min();
    let to = records.iter().map(|r| r.date).max();
    write_meta(
        &a.out,
        "features",
        None,
        &[&a.records, &a.graph, &a.betweenness],
        json!({
            "city": (cities.len() == 1).then(|| cities.iter().next().copied()).flatten(),
            "rows": joined.labels.len(),
            "severe": joined.labels.iter().filter(|&&y| y == 1).count(),
            "dropped": joined.dropped.len(),
            "from": from,
            "to": to,
            "snap_radius_m": a.snap_radius_m,
        }),
    )?;
    if !joined.dropped.is_empty() {
        eprintln!("{} records farther than {} m from any segment were dropped", joined.dropped.len(), a.snap_radius_m);
    }
    Ok(())
}

fn meta_str(meta: &Option<Value>, key: &str) -> Option<String> {
    meta.as_ref()?.get("details")?.get(key)?.as_str().map(str::to_string)
}

fn meta_date(meta: &Option<Value>, key: &str) -> Option<NaiveDate> {
    meta_str(meta, key)?.parse().ok()
}

fn fit(a: FitArgs) -> Result<(), Failure> {
    let (features, labels) = read_design_csv(&a.design)?;
    let meta = read_meta(&a.design);
    let city = a
        .city
        .clone()
        .or_else(|| meta_str(&meta, "city"))
        .ok_or_else(|| Failure::Usage("--city is required when the design has no recorded city".into()))?;
    let window = match (meta_date(&meta, "from"), meta_date(&meta, "to")) {
        (Some(from), Some(to)) => Some(TrainWindow { from, to }),
        _ => None,
    };
    let options = FitOptions { max_iterations: a.max_iterations, ridge: a.ridge, ..FitOptions::default() };
    let (model, fit, design) = fit_model(&city, &features, &labels, window, &options)?;
    write_file(&a.out, &json_bytes(&model)?)?;
    write_meta(
        &a.out,
        "fit",
        None,
        &[&a.design],
        json!({
            "status": fit.status,
            "iterations": fit.iterations,
            "ridge": fit.ridge,
            "unscaled_zero_variance_columns": design.flagged,
        }),
    )?;
    match fit.status {
        FitStatus::Converged => {}
        FitStatus::MaxIterations => eprintln!("warning: fit stopped after {} iterations without converging", fit.iterations),
        FitStatus::Separated => eprintln!("warning: labels are separable; coefficients diverge (try --ridge)"),
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<FittedModel, Failure> {
    let m = FittedModel::load(path)?;
    m.check_columns()?;
    Ok(m)
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let (test, test_labels) = read_design_csv(&a.test)?;
    let (_, train_labels) = read_design_csv(&a.train)?;
    let test_city = a
        .test_city
        .clone()
        .or_else(|| meta_str(&read_meta(&a.test), "city"))
        .unwrap_or_else(|| model.city.clone());
    let report = evaluate(&model, &test_city, &test, &test_labels, &train_labels)?;
    write_file(&a.out, &json_bytes(&report)?)?;
    let inputs = [a.model.as_path(), a.test.as_path(), a.train.as_path()];
    write_meta(&a.out, "eval", None, &inputs, json!({}))?;
    if let Some(p) = &a.csv {
        write_file(p, &csv_bytes(|b| Ok(write_report_csv(b, std::slice::from_ref(&report))?))?)?;
        write_meta(p, "eval", None, &inputs, json!({}))?;
    }
    if let Some(p) = &a.reliability_csv {
        write_file(p, &csv_bytes(|b| Ok(write_reliability_csv(b, &report.reliability)?))?)?;
        write_meta(p, "eval", None, &inputs, json!({}))?;
    }
    if let Some(p) = &a.svg {
        write_file(p, reliability_svg(&report).as_bytes())?;
        write_meta(p, "eval", None, &inputs, json!({}))?;
    }
    eprintln!(
        "{} on {}: accuracy {:.3}, BS {:.3}, BS-baseline {:.3}, BSS {:.3}",
        report.training_city, report.testing_city, report.accuracy, report.brier, report.brier_ref, report.bss
    );
    Ok(())
}

fn cross_eval(a: CrossEvalArgs) -> Result<(), Failure> {
    if a.models.len() != a.train.len() || a.models.len() != a.test.len() {
        return Err(Failure::Usage("--model, --train and --test must be given the same number of times".into()));
    }
    if a.models.len() < 2 {
        return Err(Failure::Usage("cross-city evaluation needs at least two models".into()));
    }
    let models = a.models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?;
    let train = a.train.iter().map(read_design_csv).collect::<Result<Vec<_>, _>>()?;
    let test = a.test.iter().map(read_design_csv).collect::<Result<Vec<_>, _>>()?;
    let cities: Vec<CityData> = (0..models.len())
        .map(|i| CityData { model: &models[i], train_labels: &train[i].1, test: &test[i].0, test_labels: &test[i].1 })
        .collect();
    let reports = cross_city(&cities)?;
    write_file(&a.out, &csv_bytes(|b| Ok(write_report_csv(b, &reports)?))?)?;
    let inputs: Vec<&Path> = a.models.iter().chain(&a.train).chain(&a.test).map(|p| p.as_path()).collect();
    write_meta(&a.out, "cross-eval", None, &inputs, json!({"pairs": reports.len()}))?;
    if let Some(p) = &a.json {
        write_file(p, &json_bytes(&reports)?)?;
        write_meta(p, "cross-eval", None, &inputs, json!({"pairs": reports.len()}))?;
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<(), Failure> {
    if a.models.len() < 2 {
        return Err(Failure::Usage("compare needs at least two models".into()));
    }
    let models = a.models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?;
    let bytes = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["first", "second", "column", "difference", "z", "p", "verdict"])?;
        for i in 0..models.len() {
            for j in (i + 1)..models.len() {
                let c = compare_models(&models[i], &models[j])?;
                for r in &c.rows {
                    w.write_record([
                        c.first.clone(),
                        c.second.clone(),
                        r.column.clone(),
                        r.difference.to_string(),
                        r.z.to_string(),
                        r.p.to_string(),
                        r.verdict().to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    })?;
    write_file(&a.out, &bytes)?;
    let inputs: Vec<&Path> = a.models.iter().map(|p| p.as_path()).collect();
    write_meta(&a.out, "compare", None, &inputs, json!({}))?;
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<[f64; 2]>, Failure> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Failure::Data(format!("{}: missing `{name}` column", path.display())))
    };
    let (lon, lat) = (col("lon")?, col("lat")?);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |c: usize| {
            row.get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Failure::Data(format!("{}: row {} has a bad coordinate", path.display(), i + 1)))
        };
        out.push([num(lon)?, num(lat)?]);
    }
    Ok(out)
}

fn score(a: ScoreArgs) -> Result<(), Failure> {
    let models = a.models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?;
    let graph = StreetGraph::load(&a.graph)?;
    let betweenness = load_betweenness(&a.betweenness, &graph)?;
    let points = match (&a.points, a.random) {
        (Some(p), None) => read_points(p)?,
        (None, Some(n)) => random_points(graph_extent(&graph), n, a.seed),
        _ => return Err(Failure::Usage("give either --points or --random".into())),
    };
    let index = EdgeIndex::new(&graph);
    let config = FeatureConfig { snap_radius_m: a.snap_radius_m, ..FeatureConfig::default() };
    let mut skipped = 0;
    let bytes = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        let mut header = vec!["lon".to_string(), "lat".into(), "edge_id".into(), "snap_distance_m".into()];
        for m in &models {
            header.push(format!("risk_{}", m.city));
            header.push(format!("safety_{}", m.city));
        }
        w.write_record(&header)?;
        'points: for [lon, lat] in &points {
            let mut row = Vec::new();
            for (k, m) in models.iter().enumerate() {
                let s = match score_point(m, &graph, &betweenness, &index, *lat, *lon, &config) {
                    Ok(s) => s,
                    Err(ScoreError::Graph(GraphError::Unsnappable { .. })) => {
                        skipped += 1;
                        continue 'points;
                    }
                    Err(e) => return Err(e.into()),
                };
                if k == 0 {
                    row.extend([lon.to_string(), lat.to_string(), s.edge_id.to_string(), s.snap_distance_m.to_string()]);
                }
                row.extend([s.risk.to_string(), s.safety.to_string()]);
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    })?;
    write_file(&a.out, &bytes)?;
    let mut inputs: Vec<&Path> = a.models.iter().map(|p| p.as_path()).collect();
    inputs.extend([a.graph.as_path(), a.betweenness.as_path()]);
    if let Some(p) = &a.points {
        inputs.push(p);
    }
    write_meta(
        &a.out,
        "score",
        a.random.map(|_| a.seed),
        &inputs,
        json!({"points": points.len(), "unsnappable": skipped, "snap_radius_m": a.snap_radius_m}),
    )?;
    if skipped > 0 {
        eprintln!("{skipped} points had no segment within {} m and were skipped", a.snap_radius_m);
    }
    Ok(())
}

/// Accepts a bare ring, a GeoJSON Polygon, a Feature or a FeatureCollection.
fn read_region(path: &Path) -> Result<Vec<[f64; 2]>, Failure> {
    let value: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    fn ring(v: &Value) -> Option<Vec<[f64; 2]>> {
        if v.is_array() {
            return serde_json::from_value(v.clone()).ok();
        }
        match v.get("type")?.as_str()? {
            "Polygon" => serde_json::from_value(v.get("coordinates")?.get(0)?.clone()).ok(),
            "Feature" => ring(v.get("geometry")?),
            "FeatureCollection" => ring(v.get("features")?.get(0)?),
            _ => None,
        }
    }
    ring(&value).ok_or_else(|| Failure::Data(format!("{}: not a polygon ring or GeoJSON polygon", path.display())))
}

fn scenario(a: ScenarioArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let graph = StreetGraph::load(&a.graph)?;
    let betweenness = load_betweenness(&a.betweenness, &graph)?;
    let region = read_region(&a.region)?;
    let edits = parse_edits(&std::fs::read_to_string(&a.edits)?)?;
    let options = ScenarioOptions {
        sampling: match a.densify_m {
            Some(spacing_m) => Sampling::Densify { spacing_m },
            None => Sampling::Midpoints,
        },
        features: FeatureConfig { snap_radius_m: a.snap_radius_m, ..FeatureConfig::default() },
        recompute_betweenness: a.recompute_betweenness,
    };
    let result = compare_scenarios(&model, &graph, &betweenness, &region, &edits, &options)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let mut body = serde_json::to_value(&result)?;
    body.as_object_mut()
        .expect("object")
        .insert("relative_change_percent".into(), json!(result.relative_change_percent()));
    write_file(&a.out, &json_bytes(&body)?)?;
    let inputs = [a.model.as_path(), a.graph.as_path(), a.betweenness.as_path(), a.region.as_path(), a.edits.as_path()];
    write_meta(&a.out, "scenario", None, &inputs, json!({"points": result.points.len()}))?;
    if let Some(p) = &a.geojson {
        write_file(p, &json_bytes(&result.to_geojson())?)?;
        write_meta(p, "scenario", None, &inputs, json!({}))?;
    }
    eprintln!(
        "mean safety {:.4} -> {:.4} ({}), {} edges changed",
        result.mean_baseline,
        result.mean_scenario,
        result.relative_change_percent(),
        result.changed_edges.len()
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let mut config = match &a.config {
        Some(p) => ServiceConfig::from_file(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(h) = a.host {
        config.host = h;
    }
    if let Some(p) = a.port {
        config.port = p;
    }
    if !a.models.is_empty() {
        config.models = a.models;
    }
    if a.graph.is_some() {
        config.graph = a.graph;
    }
    if a.betweenness.is_some() {
        config.betweenness = a.betweenness;
    }
    if let Some(r) = a.snap_radius_m {
        config.snap_radius_m = r;
    }
    if !a.cors_origins.is_empty() {
        config.cors_origins = a.cors_origins;
    }
    if config.graph.is_none() {
        return Err(Failure::Usage("a graph is required (--graph or config `graph`)".into()));
    }
    let state = ServiceState::load(&config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(bikesafe_service::serve(config, state))?;
    Ok(())
}
