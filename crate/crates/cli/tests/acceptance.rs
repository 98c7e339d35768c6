//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported as FAIL without failing the
//! process; any other failure exits nonzero.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bikesafe_core::evaluation::{brier_score, reliability_curve};
use bikesafe_core::risk_model::{
    build_design, compare_models, fit_logistic, fit_model, log_likelihood, log_likelihood_gradient, sigmoid,
    z_for_two_sided_p, FitOptions, FittedModel, Scaling, N_COLUMNS, Z_95,
};
use bikesafe_core::scenario::{compare_scenarios, parse_edits, ScenarioOptions};
use bikesafe_core::street_graph::{
    BetweennessMode, BetweennessResult, Bikelane, Hilliness, SegmentFeatures, StreetGraph, Topology, WeightedGraph,
};
use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The inverse normal at two-sided p = 0.103 is 1.63048, which sits 0.0015
/// from the stated 1.632; the 1e-3 tolerance cannot be met.
const KNOWN_RED: &[u32] = &[7];

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn brier_fixtures() -> Outcome {
    for (p, y, expected) in [(0.9, 1u8, 0.01), (0.55, 1, 0.2025)] {
        let bs = brier_score(&[p], &[y]).map_err(|e| e.to_string())?;
        // (1 − p)² evaluated in f64 is the exact double nearest the decimal
        ensure((bs - expected).abs() <= 1e-15, || format!("BS({p}, {y}) = {bs}, expected {expected}"))?;
    }
    Ok("0.01 and 0.2025".into())
}

/// Decimal string to an exact rational.
fn decimal(s: &str) -> Result<BigRational, String> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| format!("bad decimal `{s}`"))?;
    Ok(BigRational::new(digits, BigInt::from(10u32).pow(frac.len() as u32)))
}

fn published_skill_identity() -> Outcome {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/published_skill_scores.csv");
    let mut reader = csv::Reader::from_path(&path).map_err(|e| e.to_string())?;
    let tolerance = decimal("0.005")?;
    let one = BigRational::from_integer(1.into());
    let mut rows = 0;
    let mut worst = BigRational::from_integer(0.into());
    for record in reader.records() {
        let r = record.map_err(|e| e.to_string())?;
        let (bs, reference, bss) = (decimal(&r[3])?, decimal(&r[4])?, decimal(&r[5])?);
        let implied = &one - bs / reference;
        let diff = &implied - &bss;
        let gap = if diff < BigRational::from_integer(0.into()) { -diff } else { diff };
        ensure(gap <= tolerance, || format!("{}→{}: 1 − BS/BS_ref = {implied}, published {bss}", &r[0], &r[1]))?;
        worst = worst.max(gap);
        rows += 1;
    }
    ensure(rows == 9, || format!("expected 9 rows, read {rows}"))?;
    Ok(format!("{rows} rows, largest gap {worst} (exact arithmetic, bound inclusive)"))
}

fn betweenness_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for k in 0..200 {
        let (n, edges) = support::random_connected_graph(&mut rng, 12, k % 2 == 0);
        let expected = support::brute_force_edge_betweenness(n, &edges);
        let got = WeightedGraph::new(n, edges.clone())
            .edge_betweenness(BetweennessMode::Exact)
            .map_err(|e| e.to_string())?;
        for (g, e) in got.raw.iter().zip(&expected) {
            worst = worst.max((g - e).abs());
        }
        ensure(worst < 1e-9, || format!("graph {k}: max abs error {worst}"))?;
    }
    Ok(format!("200 graphs, max abs error {worst:.1e}"))
}

fn random_features(rng: &mut ChaCha8Rng) -> SegmentFeatures {
    SegmentFeatures {
        speed_limit: [20.0, 30.0, 40.0, 50.0, 60.0][rng.gen_range(0..5)] + rng.gen_range(-2.0..2.0),
        width: rng.gen_range(4.0..14.0),
        dist_intersect: rng.gen_range(0.0..150.0),
        hilliness: if rng.gen_bool(0.2) { Hilliness::Hilly } else { Hilliness::Flat },
        topology: if rng.gen_bool(0.3) { Topology::Curved } else { Topology::Straight },
        bikelane: if rng.gen_bool(0.4) { Bikelane::With } else { Bikelane::Without },
        betweenness: rng.gen_range(0.0..0.3),
    }
}

fn coefficient_recovery() -> Outcome {
    let truth = DVector::from_vec(vec![-1.2, 0.5, -0.2, 0.35, -0.25, 0.4, 0.3, -0.6, 0.2, -0.3, 0.1]);
    let seeds = 50;
    let mut covered = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let rows: Vec<_> = (0..10_000).map(|_| random_features(&mut rng)).collect();
        let d = build_design(&rows, Scaling::Fit).map_err(|e| e.to_string())?;
        let y: Vec<u8> = (&d.matrix * &truth).iter().map(|&eta| rng.gen_bool(sigmoid(eta)) as u8).collect();
        let fit = fit_logistic(&d.matrix, &y, &FitOptions::default()).map_err(|e| e.to_string())?;
        ensure(fit.converged(), || format!("seed {seed} did not converge"))?;
        covered +=
            (0..N_COLUMNS).filter(|&j| (fit.coefficients[j] - truth[j]).abs() <= Z_95 * fit.standard_errors[j]).count();
    }
    let rate = covered as f64 / (seeds as usize * N_COLUMNS) as f64;
    ensure(rate >= 0.90, || format!("coverage {rate:.3} < 0.90"))?;
    Ok(format!("coverage {rate:.3} over {seeds} seeds"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for problem in 0..20 {
        let n = rng.gen_range(10..60);
        let p = rng.gen_range(2..=N_COLUMNS);
        let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-2.0..2.0) });
        let y: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.4) as u8).collect();
        let a = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
        let analytic = log_likelihood_gradient(&x, &y, &a);
        for j in 0..p {
            let (mut up, mut down) = (a.clone(), a.clone());
            up[j] += h;
            down[j] -= h;
            let numeric = (log_likelihood(&x, &y, &up) - log_likelihood(&x, &y, &down)) / (2.0 * h);
            let rel = (numeric - analytic[j]).abs() / analytic[j].abs().max(1e-8);
            worst = worst.max(rel);
            ensure(rel < 1e-4, || format!("problem {problem}, column {j}: {numeric} vs {}", analytic[j]))?;
        }
    }
    Ok(format!("20 problems, max relative error {worst:.1e}"))
}

fn calibration_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let probs: Vec<f64> = (0..100_000).map(|_| rng.gen::<f64>()).collect();
    let labels: Vec<u8> = probs.iter().map(|&p| rng.gen_bool(p) as u8).collect();
    let bins = reliability_curve(&probs, &labels).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for b in &bins {
        if let (Some(pred), Some(obs)) = (b.mean_pred, b.observed_frac) {
            let gap = (obs - pred).abs();
            worst = worst.max(gap);
            ensure(gap < 0.02, || format!("bin [{}, {}): |{obs} − {pred}| = {gap}", b.lo, b.hi))?;
        }
    }
    Ok(format!("{} bins, max gap {worst:.4}", bins.len()))
}

fn z_fixtures() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<_> = (0..2000).map(|_| random_features(&mut rng)).collect();
    let y: Vec<u8> = (0..rows.len()).map(|_| rng.gen_bool(0.25) as u8).collect();
    let (m, ..) = fit_model("a", &rows, &y, None, &FitOptions::default()).map_err(|e| e.to_string())?;
    let cmp = compare_models(&m, &m).map_err(|e| e.to_string())?;
    ensure(cmp.rows.iter().all(|r| r.z == 0.0 && r.p == 1.0), || "self-comparison with z ≠ 0 or p ≠ 1".into())?;
    let z = z_for_two_sided_p(0.103);
    ensure((z - 1.632).abs() < 1e-3, || format!("self-comparison ok; |z| at p = 0.103 is {z:.7}, |z − 1.632| = {:.5} ≥ 1e-3", (z - 1.632).abs()))?;
    Ok(format!("self-comparison z = 0, p = 1; |z| = {z:.4}"))
}

fn scenario_arithmetic() -> Outcome {
    let dir = fixtures().join("scenario");
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let model = FittedModel::load(dir.join("model.json")).map_err(|e| e.to_string())?;
    let graph = StreetGraph::load(dir.join("graph.json")).map_err(|e| e.to_string())?;
    let b = BetweennessResult::read_csv(dir.join("betweenness.csv"), BetweennessMode::Exact, 1.0)
        .map_err(|e| e.to_string())?;
    let region: serde_json::Value = serde_json::from_str(&read("region.geojson")?).map_err(|e| e.to_string())?;
    let ring: Vec<[f64; 2]> =
        serde_json::from_value(region["geometry"]["coordinates"][0].clone()).map_err(|e| e.to_string())?;
    let edits = parse_edits(&read("edits.json")?).map_err(|e| e.to_string())?;
    let r = compare_scenarios(&model, &graph, &b, &ring, &edits, &ScenarioOptions::default()).map_err(|e| e.to_string())?;
    ensure((r.mean_baseline - 0.54).abs() < 1e-12, || format!("baseline mean {}", r.mean_baseline))?;
    ensure((r.mean_scenario - 0.68).abs() < 1e-12, || format!("scenario mean {}", r.mean_scenario))?;
    let percent = r.relative_change_percent();
    ensure(percent == "26%", || format!("rendered `{percent}`"))?;
    Ok(format!("{:.2} -> {:.2}, relative change {:.4} rendered {percent}", r.mean_baseline, r.mean_scenario, r.relative_change))
}

fn bikesafe(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bikesafe")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("bikesafe {}: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Graph, betweenness and one city's ingest → features → fit → eval.
fn run_pipeline(dir: &Path, cities: &[&str]) -> Result<(), String> {
    let (graph, b) = (dir.join("graph.json"), dir.join("betweenness.csv"));
    let osm = fixtures().join("town.osm");
    let elevation = fixtures().join("town_elevation.csv");
    bikesafe(&["graph-build", "--osm", s(&osm), "--elevation", s(&elevation), "--out", s(&graph)])?;
    bikesafe(&["betweenness", "--graph", s(&graph), "--out", s(&b)])?;
    for city in cities {
        let feed = fixtures().join(format!("{city}_accidents.csv"));
        let records = dir.join(format!("{city}.jsonl"));
        let train = dir.join(format!("{city}_train.csv"));
        let test = dir.join(format!("{city}_test.csv"));
        let model = dir.join(format!("{city}_model.json"));
        let report = dir.join(format!("{city}_eval.json"));
        bikesafe(&["ingest", "--schema", city, "--input", s(&feed), "--out", s(&records)])?;
        for (out, from, to) in [(&train, "2012-01-01", "2014-12-31"), (&test, "2015-01-01", "2015-12-31")] {
            bikesafe(&[
                "features", "--graph", s(&graph), "--betweenness", s(&b), "--records", s(&records), "--out", s(out),
                "--from", from, "--to", to,
            ])?;
        }
        bikesafe(&["fit", "--design", s(&train), "--out", s(&model)])?;
        bikesafe(&["eval", "--model", s(&model), "--test", s(&test), "--train", s(&train), "--out", s(&report)])?;
    }
    Ok(())
}

fn directory_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        files.push((name, std::fs::read(&path).map_err(|e| e.to_string())?));
    }
    files.sort();
    Ok(files)
}

fn end_to_end_determinism(workspace: &Path) -> Outcome {
    let (a, b) = (workspace.join("run_a"), workspace.join("run_b"));
    for dir in [&a, &b] {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        run_pipeline(dir, &["london"])?;
    }
    let (fa, fb) = (directory_bytes(&a)?, directory_bytes(&b)?);
    ensure(fa.len() == fb.len(), || "runs produced different file sets".into())?;
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        ensure(na == nb && ba == bb, || format!("{na} differs between runs"))?;
    }
    Ok(format!("{} output files byte-identical", fa.len()))
}

fn cross_city_shape(workspace: &Path) -> Outcome {
    let dir = workspace.join("cross");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let cities = ["london", "boston", "pittsburgh"];
    run_pipeline(&dir, &cities)?;
    let mut args: Vec<String> = vec!["cross-eval".into()];
    for (flag, suffix) in [("--model", "model.json"), ("--train", "train.csv"), ("--test", "test.csv")] {
        args.push(flag.into());
        args.extend(cities.iter().map(|c| s(&dir.join(format!("{c}_{suffix}"))).to_string()));
    }
    let out = dir.join("cross.csv");
    args.extend(["--out".into(), s(&out).into()]);
    bikesafe(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    let mut reader = csv::Reader::from_path(&out).map_err(|e| e.to_string())?;
    let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    ensure(rows.len() == 6, || format!("{} rows", rows.len()))?;
    let mut pairs = std::collections::BTreeSet::new();
    for r in &rows {
        ensure(r[0] != r[1], || format!("self pair {}", &r[0]))?;
        pairs.insert((r[0].to_string(), r[1].to_string()));
        let num = |i: usize| r[i].parse::<f64>().map_err(|e| e.to_string());
        let (bs, reference, bss) = (num(3)?, num(4)?, num(5)?);
        ensure((bss - (1.0 - bs / reference)).abs() < 1e-12, || format!("{}→{}: BSS {bss}", &r[0], &r[1]))?;
    }
    ensure(pairs.len() == 6, || "duplicate ordered pairs".into())?;
    Ok("6 ordered pairs, BSS = 1 − BS/BS_ref on every row".into())
}

fn main() {
    let workspace = tempfile::tempdir().expect("temp dir");
    let w = workspace.path().to_path_buf();
    let w2 = w.clone();
    let criteria: Vec<(u32, &str, Duration, Box<dyn FnOnce() -> Outcome>)> = vec![
        (1, "Brier fixtures", Duration::from_secs(1), Box::new(brier_fixtures)),
        (2, "BSS identity on published rows", Duration::from_secs(1), Box::new(published_skill_identity)),
        (3, "betweenness oracle equivalence", Duration::from_secs(30), Box::new(betweenness_oracle)),
        (4, "coefficient recovery", Duration::from_secs(120), Box::new(coefficient_recovery)),
        (5, "gradient check", Duration::from_secs(10), Box::new(gradient_check)),
        (6, "calibration soundness", Duration::from_secs(10), Box::new(calibration_soundness)),
        (7, "z-score fixtures", Duration::from_secs(1), Box::new(z_fixtures)),
        (8, "scenario arithmetic", Duration::from_secs(5), Box::new(scenario_arithmetic)),
        (9, "end-to-end determinism", Duration::from_secs(60), Box::new(move || end_to_end_determinism(&w))),
        (10, "cross-city harness shape", Duration::from_secs(30), Box::new(move || cross_city_shape(&w2))),
    ];
    let mut unexpected = Vec::new();
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} ({elapsed:.2?})"),
            Err(reason) => {
                let known = KNOWN_RED.contains(&id);
                println!("FAIL {id:>2} {name}: {reason}{}", if known { " [known]" } else { "" });
                if !known {
                    unexpected.push(id);
                }
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
